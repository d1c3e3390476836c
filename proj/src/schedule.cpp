#include "tse/schedule.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

namespace tse {

namespace {
constexpr int kScheduleFormatVersion = 1;
}

NoiseSchedule NoiseSchedule::build(int T, double beta_start, double beta_end) {
    if (T < 2) throw ParameterError("schedule needs T >= 2");
    if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
        throw ParameterError("schedule needs 0 < beta_start <= beta_end < 1");

    // Scaled-linear spacing: interpolate linearly in sqrt(beta).
    std::vector<double> betas(static_cast<size_t>(T));
    const double s0 = std::sqrt(beta_start);
    const double s1 = std::sqrt(beta_end);
    for (int t = 1; t <= T; ++t) {
        const double u = static_cast<double>(t - 1) / static_cast<double>(T - 1);
        const double s = s0 + (s1 - s0) * u;
        betas[t - 1] = s * s;
    }
    betas.front() = beta_start;
    betas.back() = beta_end;
    return from_betas(std::move(betas));
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
    if (betas.size() < 2) throw ParameterError("schedule needs T >= 2");
    for (double b : betas)
        if (!(b > 0.0) || b > 1.0) throw ParameterError("betas must lie in (0, 1]");
    NoiseSchedule s;
    s.beta_ = std::move(betas);
    s.derive_from_betas();
    return s;
}

void NoiseSchedule::derive_from_betas() {
    const size_t T = beta_.size();
    alpha_.resize(T);
    alpha_bar_.resize(T);
    sqrt_alpha_bar_.resize(T);
    sqrt_one_minus_alpha_bar_.resize(T);
    double prod = 1.0;
    for (size_t i = 0; i < T; ++i) {
        alpha_[i] = 1.0 - beta_[i];
        prod *= alpha_[i];
        alpha_bar_[i] = prod;
        sqrt_alpha_bar_[i] = std::sqrt(prod);
        sqrt_one_minus_alpha_bar_[i] = std::sqrt(1.0 - prod);
    }
}

NoiseSchedule NoiseSchedule::rescaled_terminal() const {
    if (rescaled_) throw ParameterError("schedule already rescaled");
    const int T = this->T();
    const double first = sqrt_alpha_bar_[0];
    const double last = sqrt_alpha_bar_[static_cast<size_t>(T) - 1];
    if (!(first > last)) throw NumericError("degenerate schedule: sqrt_alpha_bar[1] <= sqrt_alpha_bar[T]");

    NoiseSchedule out;
    out.rescaled_ = true;
    out.sqrt_alpha_bar_.resize(static_cast<size_t>(T));
    const double scale = first / (first - last);
    for (int i = 0; i < T; ++i)
        out.sqrt_alpha_bar_[static_cast<size_t>(i)] = (sqrt_alpha_bar_[static_cast<size_t>(i)] - last) * scale;
    // Endpoint contract is exact, not up to rounding.
    out.sqrt_alpha_bar_.front() = first;
    out.sqrt_alpha_bar_.back() = 0.0;

    out.alpha_bar_.resize(static_cast<size_t>(T));
    out.sqrt_one_minus_alpha_bar_.resize(static_cast<size_t>(T));
    out.beta_.resize(static_cast<size_t>(T));
    out.alpha_.resize(static_cast<size_t>(T));
    for (int i = 0; i < T; ++i) {
        const double ab = out.sqrt_alpha_bar_[static_cast<size_t>(i)] * out.sqrt_alpha_bar_[static_cast<size_t>(i)];
        out.alpha_bar_[static_cast<size_t>(i)] = ab;
        out.sqrt_one_minus_alpha_bar_[static_cast<size_t>(i)] = std::sqrt(1.0 - ab);
        const double prev = (i == 0) ? 1.0 : out.alpha_bar_[static_cast<size_t>(i) - 1];
        // beta_t = 1 - alpha_bar_t / alpha_bar_{t-1}; beta_T becomes exactly 1.
        out.beta_[static_cast<size_t>(i)] = 1.0 - ab / prev;
        out.alpha_[static_cast<size_t>(i)] = 1.0 - out.beta_[static_cast<size_t>(i)];
    }
    return out;
}

std::string NoiseSchedule::to_json() const {
    nlohmann::json j;
    j["version"] = kScheduleFormatVersion;
    j["T"] = T();
    j["beta"] = beta_;
    j["rescaled"] = rescaled_;
    return j.dump(2);
}

NoiseSchedule NoiseSchedule::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    if (!j.contains("version") || j["version"].get<int>() != kScheduleFormatVersion)
        throw ConfigError("unsupported schedule format version");
    std::vector<double> betas = j.at("beta").get<std::vector<double>>();
    const bool rescaled = j.at("rescaled").get<bool>();
    if (j.at("T").get<int>() != static_cast<int>(betas.size()))
        throw ConfigError("schedule T does not match beta array length");

    if (!rescaled) return from_betas(std::move(betas));

    // Rescaled tables carry beta_T = 1; rebuild alpha_bar from the product
    // (the terminal zero is exact because of the 1 - beta_T = 0 factor).
    NoiseSchedule s;
    for (double b : betas)
        if (!(b > 0.0) || b > 1.0) throw ConfigError("betas must lie in (0, 1]");
    s.beta_ = std::move(betas);
    s.derive_from_betas();
    s.rescaled_ = true;
    return s;
}

void NoiseSchedule::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open schedule file for writing: " + path);
    f << to_json() << "\n";
}

NoiseSchedule NoiseSchedule::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open schedule file: " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return from_json(text);
}

}  // namespace tse
