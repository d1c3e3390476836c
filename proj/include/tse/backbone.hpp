#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tse/diffusion.hpp"
#include "tse/embedding.hpp"
#include "tse/latent.hpp"

namespace tse {

struct BackboneConfig {
    int depth = 12;
    int width = 768;
    int heads = 12;
    int latent_channels = kLatentChannels;
    double rope_base = 10000.0;
    int mlp_ratio = 4;
    bool use_skips = true;

    int head_dim() const { return width / heads; }
    void validate() const;
};

// Deterministic sinusoidal timestep embedding (the learned projection on
// top of it lives in the model's condition pathway).
Eigen::VectorXd time_embedding(int t, int width);

// In-place rotary embedding over the head blocks of x ([N, heads*head_dim],
// adjacent column pairs rotated by position-dependent angles). `inverse`
// applies the transposed rotation (used by backprop).
template <typename S>
void rope_rotate_inplace(Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& x, int heads,
                         const std::vector<int>& positions, double base, bool inverse = false);

template <typename S>
struct DitParams {
    using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
    using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

    // Linears are stored [in, out]; rows of activations are frames.
    Mat input_w;
    Vec input_b;
    Mat time_w1, time_w2;
    Vec time_b1, time_b2;
    Mat ref_w;     // [512, W], no bias
    Vec null_ref;  // learned unconditional reference, [512]

    struct Block {
        Mat adaln_w;  // [W, 6W] -> (shift1, scale1, gate1, shift2, scale2, gate2)
        Vec adaln_b;
        Mat wq, wk, wv, wo;
        Vec bq, bk, bv, bo;
        Mat mlp_w1, mlp_w2;
        Vec mlp_b1, mlp_b2;
        Mat skip_w;  // [2W, W], deep blocks only (empty otherwise)
        Vec skip_b;
    };
    std::vector<Block> blocks;

    Mat head_mod_w;  // [W, 2W] -> (shift, scale)
    Vec head_mod_b;
    Mat head_out_w;  // [W, C]
    Vec head_out_b;

    void setZero();
};

// Flat view of one tensor inside a DitParams struct. Enumeration order is
// stable; it defines checkpoint layout and init draw order.
template <typename S>
struct TensorRef {
    std::string name;
    S* data;
    Eigen::Index rows, cols;
    Eigen::Index size() const { return rows * cols; }
};

template <typename S>
std::vector<TensorRef<S>> collect_tensors(DitParams<S>& p);

template <typename S>
DitParams<S> make_params(const BackboneConfig& cfg);

template <typename From, typename To>
void cast_params(const DitParams<From>& src, DitParams<To>& dst);

// Skip-connected diffusion transformer. Maps (noisy latent, mixture latent,
// condition, timestep) to a velocity field. Forward caches every
// intermediate needed by the hand-written backward pass.
template <typename S>
class DitModel final : public VelocityPredictor {
public:
    using Mat = typename DitParams<S>::Mat;
    using Vec = typename DitParams<S>::Vec;

    explicit DitModel(const BackboneConfig& cfg);

    void init_weights(uint64_t seed);

    struct BlockCache {
        Mat skip_cat;         // [N, 2W] (deep blocks)
        Mat h_in;             // [N, W]
        Vec chunks;           // [6W]
        Mat xhat1, y1;        // [N, W]
        Vec inv_std1;         // [N]
        Mat q, k, v, qr, kr;  // [N, W]
        std::vector<Mat> attn;  // per head [N, N]
        Mat att_cat, attn_out;  // [N, W]
        Mat h_mid;
        Mat xhat2, y2;
        Vec inv_std2;
        Mat mlp_pre, mlp_act;  // [N, 4W]
        Mat mlp_out;           // [N, W]
        Mat h_out;
    };

    struct Cache {
        int t = 0;
        bool is_null = false;
        std::vector<int> positions;
        Vec ref;                          // [512] (actual vector used)
        Vec t_sin, time_pre, time_act, t_embed;  // condition pathway
        Vec cond, silu_cond;
        Mat x_cat;     // [N, 2C]
        Mat proj_out;  // [N, W]
        std::vector<BlockCache> blocks;
        Mat xhat_h, y_h;  // output head
        Vec inv_std_h;
        Vec head_chunks;  // [2W]
        Vec d_cond;       // filled by backward (gradient w.r.t. cond)
    };

    // Condition pathway pieces (each also usable standalone in tests).
    Vec time_pathway(int t, Cache* cache = nullptr) const;
    Vec fuse_condition(const Vec& t_embed, const Vec& ref512) const;
    Vec condition(int t, const Vec& ref512, Cache* cache = nullptr) const;

    struct AdalnChunks {
        Vec shift1, scale1, gate1, shift2, scale2, gate2;
    };
    AdalnChunks adaln_modulate(int block, const Vec& cond) const;

    // Concatenates [deep | shallow] on channels and projects back to width.
    Mat skip_merge(int block, const Mat& shallow, const Mat& deep) const;

    // x_t, x_m: [N, C]. Returns velocity [N, C].
    Mat forward(const Mat& x_t, const Mat& x_m, const Vec& ref512, bool is_null, int t,
                Cache& cache, const std::vector<int>* positions = nullptr) const;
    // Same but with an externally supplied condition vector (for tests).
    Mat forward_with_cond(const Mat& x_t, const Mat& x_m, const Vec& cond, Cache& cache,
                          const std::vector<int>* positions = nullptr) const;
    // Input projection + block stack only (pre-head features).
    const Mat& features(const Cache& cache) const { return cache.blocks.back().h_out; }

    // Accumulates parameter gradients (and cache.d_cond) for upstream d_v.
    void backward(Cache& cache, const Mat& d_v, DitParams<S>& grads) const;

    // VelocityPredictor surface (double in/out; converts internally).
    Velocity predict(const LatentSequence& x_t, const LatentSequence& x_m,
                     const ReferenceEmbedding& ref, int t) const override;
    const ReferenceEmbedding& null_reference() const override;

    size_t param_count() const;
    static size_t expected_param_count(const BackboneConfig& cfg);
    std::string summary() const;

    const BackboneConfig& config() const { return cfg_; }
    DitParams<S>& params() { return p_; }
    const DitParams<S>& params() const { return p_; }

private:
    void run_stack(Cache& cache) const;

    BackboneConfig cfg_;
    DitParams<S> p_;
    mutable ReferenceEmbedding null_cache_;
};

using DitModelF = DitModel<float>;
using DitModelD = DitModel<double>;

}  // namespace tse
