#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dmamba/nn_ops.hpp"
#include "dmamba/rng.hpp"
#include "dmamba/ss2d.hpp"
#include "dmamba/tensor.hpp"

namespace dmamba {

// Network: patch embedding -> stages of dual-branch blocks (patch merging
// between stages) -> global-pool classifier. Feature maps are channels-last;
// the input is a one-channel [B,H,W,1] map of electrodes x samples. Rows and
// columns are zero-padded at the end up to a multiple of patch_size, so the
// default 17x200 input becomes 20x200 and embeds to 5x50.
struct ModelConfig {
    int64_t input_height = 17;  // electrodes
    int64_t input_width = 200;  // samples per epoch
    int64_t patch_size = 4;
    int64_t base_dim = 32;
    std::vector<int64_t> stage_depths{1};
    int64_t state_size = 8;
    int64_t num_classes = 2;
    bool d_skip = true;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

// Flat, ordered collection of every tensor in a model. Parameters are
// trainable; buffers (batch-norm running stats) are saved but not optimized.
class ParamRegistry {
public:
    struct Item {
        std::string name;
        Tensor tensor;
        bool trainable;
    };

    Tensor add_param(const std::string& name, Tensor t);
    Tensor add_buffer(const std::string& name, Tensor t);
    const std::vector<Item>& items() const { return items_; }
    std::vector<Tensor> trainable_tensors() const;
    Tensor find(const std::string& name) const;  // undefined handle when missing

private:
    std::vector<Item> items_;
};

struct LinearLayer {
    Tensor w, b;
    LinearLayer() = default;
    LinearLayer(const std::string& prefix, ParamRegistry& reg, int64_t in, int64_t out, Rng& rng);
    Tensor forward(const Tensor& x) const { return linear(x, w, b); }
};

struct ConvLayer {
    Conv2DParams p;
    ConvLayer() = default;
    // with_bias is false for convolutions feeding a batch norm, where a
    // per-channel bias would be cancelled by the normalization.
    ConvLayer(const std::string& prefix, ParamRegistry& reg, int64_t in, int64_t out, int64_t k,
              int64_t stride, int64_t padding, int64_t groups, Rng& rng, bool with_bias = true);
    Tensor forward(const Tensor& x) const { return conv2d(x, p); }
};

struct BatchNormLayer {
    NormParams p;
    BatchNormLayer() = default;
    BatchNormLayer(const std::string& prefix, ParamRegistry& reg, int64_t channels);
    Tensor forward(const Tensor& x, NormMode mode) { return batchnorm2d(x, p, mode); }
};

struct LayerNormLayer {
    NormParams p;
    LayerNormLayer() = default;
    LayerNormLayer(const std::string& prefix, ParamRegistry& reg, int64_t channels);
    Tensor forward(const Tensor& x) const { return layernorm(x, p); }
};

// Local-feature branch: BN -> (3x3 conv + BN + ReLU) x2 -> 1x1 conv + ReLU,
// run channels-first between two permutes.
struct ConvBranch {
    BatchNormLayer bn1, bn2, bn3;
    ConvLayer conv1, conv2, pw;
    ConvBranch() = default;
    ConvBranch(const std::string& prefix, ParamRegistry& reg, int64_t channels, Rng& rng);
    Tensor forward(const Tensor& x, NormMode mode);
};

// Global-context branch: LN -> Linear -> DWConv -> SiLU -> SS2D -> LN,
// gated by SiLU(Linear(LN(x))) and projected out.
struct SSMBranch {
    LayerNormLayer ln1, ln2;
    LinearLayer lin_in, lin_gate, lin_out;
    ConvLayer dwconv;
    SS2DWeights ss2d;
    SSMBranch() = default;
    SSMBranch(const std::string& prefix, ParamRegistry& reg, int64_t channels, int64_t state,
              bool d_skip, Rng& rng);
    Tensor forward(const Tensor& x);
};

// Dual-branch block: channel-split, per-branch transforms, concat, shuffle,
// residual add. Shape-preserving; requires an even channel count.
struct SSConvSSMBlock {
    ConvBranch conv_branch;
    SSMBranch ssm_branch;
    SSConvSSMBlock() = default;
    SSConvSSMBlock(const std::string& prefix, ParamRegistry& reg, int64_t channels, int64_t state,
                   bool d_skip, Rng& rng);
    Tensor forward(const Tensor& x, NormMode mode);
};

// 2x2 neighbourhood concat (zero-padding odd extents) -> LN -> linear 4C->2C.
struct PatchMerging {
    LayerNormLayer ln;
    LinearLayer proj;
    PatchMerging() = default;
    PatchMerging(const std::string& prefix, ParamRegistry& reg, int64_t channels, Rng& rng);
    Tensor forward(const Tensor& x) const;
};

class Model {
public:
    Model(const ModelConfig& cfg, uint64_t init_seed);

    // x [B,H,W,1] with H,W matching the config -> logits [B,num_classes].
    Tensor forward(const Tensor& x, NormMode mode);

    const ModelConfig& config() const { return cfg_; }
    const ParamRegistry& registry() const { return reg_; }
    std::vector<Tensor> parameters() const { return reg_.trainable_tensors(); }
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    void zero_grad() const;

    // Value snapshot/restore of every tensor (params and buffers).
    std::vector<std::vector<double>> snapshot_values() const;
    void restore_values(const std::vector<std::vector<double>>& values) const;

private:
    ModelConfig cfg_;
    ParamRegistry reg_;
    ConvLayer patch_embed_;
    std::vector<std::vector<SSConvSSMBlock>> stages_;
    std::vector<PatchMerging> merges_;
    LinearLayer head_;
};

int64_t count_params(const Model& m);

// Checkpoint container: magic, version, config record, then every named
// tensor (name, rank, extents, float64 payload), all little-endian. The
// round-trip is bit-exact.
void save_checkpoint(const Model& m, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace dmamba
