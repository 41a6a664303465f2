#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "volscreen/tensor.hpp"
#include "volscreen/volume.hpp"

namespace volscreen {

// Fixed small architecture: conv 3x3/s1/p1 -> ReLU -> maxpool 2x2, twice,
// then a dense layer to the embedding with no final nonlinearity.
struct NetSpec {
    std::size_t input_h = 64;
    std::size_t input_w = 64;
    std::size_t conv1_filters = 8;
    std::size_t conv2_filters = 16;
    std::size_t kernel = 3;
    std::size_t embed_dim = 32;

    std::size_t flat_dim() const { return conv2_filters * (input_h / 4) * (input_w / 4); }
    void validate() const;
    bool operator==(const NetSpec&) const = default;
};

struct ParamGrads {
    Tensor conv1_w, conv1_b;
    Tensor conv2_w, conv2_b;
    Tensor dense_w, dense_b;
};

// Weights of the embedder. Both branches of the Siamese pair are the same
// EmbeddingNet value; sharing is structural.
struct EmbeddingNet {
    NetSpec spec;
    Tensor conv1_w, conv1_b;  // [f1,1,k,k], [f1]
    Tensor conv2_w, conv2_b;  // [f2,f1,k,k], [f2]
    Tensor dense_w, dense_b;  // [D,flat], [D]
    std::uint64_t init_seed = 0;
};

// Activation record of one forward pass, consumed by backward.
struct ForwardCache {
    Tensor input;              // [H,W]
    Tensor pre1;               // [f1,H,W], pre-ReLU
    Tensor pool1;              // [f1,H/2,W/2], post-ReLU post-pool
    std::vector<std::size_t> pool1_src;  // flat argmax index into act1 per pooled cell
    Tensor pre2;               // [f2,H/2,W/2]
    Tensor pool2_flat;         // [flat]
    std::vector<std::size_t> pool2_src;
};

struct SgdConfig {
    double learning_rate = 1e-3;
    double momentum = 0.0;
};

// He-normal weights (N(0, 2/fan_in)) from a seeded generator, zero biases.
EmbeddingNet init_net(const NetSpec& spec, std::uint64_t seed);

// Embeds one slice; fills *cache when given.
Tensor forward(const EmbeddingNet& net, const Tensor& slice, ForwardCache* cache = nullptr);

// Exact gradients of <d_embedding, embedding> with respect to all parameters.
ParamGrads backward(const EmbeddingNet& net, const ForwardCache& cache,
                    const Tensor& d_embedding);

ParamGrads zero_grads(const NetSpec& spec);
void accumulate(ParamGrads& into, const ParamGrads& g);

// Plain SGD with optional classical momentum; velocity state lives here so
// the update is w <- w - lr*g when momentum is 0.
class SgdOptimizer {
public:
    explicit SgdOptimizer(SgdConfig cfg) : cfg_(cfg) {}
    void step(EmbeddingNet& net, const ParamGrads& grads);
    const SgdConfig& config() const { return cfg_; }

private:
    SgdConfig cfg_;
    bool has_velocity_ = false;
    ParamGrads velocity_;
};

// Worst relative error |a-n| / max(|a|,|n|,1e-8) of analytic gradients
// against central finite differences of the probe loss sum(embedding),
// over every parameter.
double grad_check(const EmbeddingNet& net, const Tensor& input, double eps);

enum class Pooling { mean_slices, mid_slice };

std::string to_string(Pooling p);
Pooling pooling_from_string(const std::string& s);

// mean_slices: arithmetic mean of per-slice embeddings;
// mid_slice: embedding of slice floor(S/2).
// When caches is given it receives one ForwardCache per forwarded slice
// (all slices for mean_slices, just the middle one for mid_slice), which is
// what backpropagating a loss through the pooled embedding needs.
Tensor embed_volume(const EmbeddingNet& net, const Volume& v, Pooling pooling,
                    std::vector<ForwardCache>* caches = nullptr);

// Versioned text document; decimal values with 17 significant digits
// round-trip doubles bit-exactly.
void save_net(const EmbeddingNet& net, const std::string& path);
EmbeddingNet load_net(const std::string& path);

}  // namespace volscreen
