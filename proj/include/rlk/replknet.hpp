#pragma once

#include <array>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "rlk/conv.hpp"
#include "rlk/reparam.hpp"

namespace rlk {

struct io_error : error {
    using error::error;
};
struct version_error : io_error {
    using io_error::io_error;
};
struct truncated_error : io_error {
    using io_error::io_error;
};
struct checksum_error : io_error {
    using io_error::io_error;
};

/// Architecture family descriptor: per-stage block counts B, channel widths
/// C and kernel sizes K, plus the small re-param branch size and block
/// options.
struct ArchSpec {
    std::array<int, 4> blocks{2, 2, 18, 2};
    std::array<int, 4> channels{128, 256, 512, 1024};
    std::array<int, 4> kernels{31, 29, 27, 13};
    int small_kernel = 5;  // 0 = no re-param branch
    float ffn_ratio = 4.0f;
    float dw_expansion = 1.0f;  // 1.5 for the XL variant
    int in_channels = 3;
    int num_classes = 1000;
    bool with_head = true;

    void validate() const;
    int dw_channels(int stage) const;

    /// JSON object with keys B, C, K, small_kernel, ffn_ratio, dw_expansion,
    /// num_classes, with_head (in_channels optional, default 3).
    static ArchSpec from_json(const std::string& text);
    std::string to_json() const;
};

enum class NodeKind { input, conv, bn, relu, gelu, add, gap, linear };

const char* node_kind_name(NodeKind k);
NodeKind node_kind_from_string(const std::string& s);

/// One primitive operation. Nodes reference earlier nodes by index, so the
/// graph is an SSA-style list; forks and shortcut joins need no special
/// structure.
struct Node {
    NodeKind kind = NodeKind::input;
    int input = -1;
    int input2 = -1;  // add only
    std::string param;  // weight-name prefix for conv/bn/linear

    ConvSpec spec;          // conv
    bool has_bias = false;  // conv
    int channels = 0;       // bn
    float bn_eps = 1e-5f;   // bn
    int features_in = 0, features_out = 0;  // linear
};

struct LayerGraph {
    std::vector<Node> nodes;
    int in_channels = 3;
    bool with_head = false;
    int num_classes = 0;

    int output() const { return static_cast<int>(nodes.size()) - 1; }
    int64_t bn_count() const;
};

struct NamedTensor {
    std::string name;
    std::vector<int64_t> shape;
    std::vector<float> data;

    int64_t size() const;
};

/// Ordered name -> tensor map covering every parameterized graph node.
class ModelWeights {
public:
    void put(std::string name, std::vector<int64_t> shape, std::vector<float> data);
    bool has(const std::string& name) const;
    const NamedTensor& get(const std::string& name) const;
    NamedTensor& get_mut(const std::string& name);
    const std::vector<NamedTensor>& all() const { return tensors_; }

private:
    std::vector<NamedTensor> tensors_;
    std::unordered_map<std::string, size_t> index_;
};

/// Builds the layer graph: Stem (3x3 s2, DW 3x3, 1x1, DW 3x3 s2), four
/// stages of [RepLK block + ConvFFN block] pairs with Transition blocks
/// between them, and an optional BN + global-average-pool + linear head.
/// Every conv is followed by a BN; ReLU everywhere except before shortcut
/// adds and before GELU.
LayerGraph build(const ArchSpec& arch);

/// Plain stack of depth-wise same-padding convolutions, optionally with a
/// ReLU after each. No BN. Used for receptive-field studies and benchmarks.
LayerGraph build_conv_stack(int channels, int kernel, int layers, bool with_relu);

/// Deterministic weight init: conv and linear weights normal(0, 0.02),
/// biases zero, BN at identity. One stream in node order, so a given seed
/// pins every parameter.
ModelWeights init_random(const LayerGraph& g, uint64_t seed);

Tensor forward(const LayerGraph& g, const ModelWeights& w, const Tensor& x, Backend b);
/// Forward keeping every node's output; index-aligned with g.nodes.
std::vector<Tensor> forward_all(const LayerGraph& g, const ModelWeights& w, const Tensor& x,
                                Backend b);

struct CountResult {
    int64_t params = 0;
    int64_t macs = 0;  // one sample at the given resolution
};
/// Parameter and multiply-accumulate totals at a square input resolution.
/// BN counts its two affine vectors; running statistics are not parameters.
CountResult count(const LayerGraph& g, int resolution);

/// Converts a trained-form model to deploy form: parallel small branches are
/// merged into their large kernels, conv-BN pairs are folded, and remaining
/// standalone BNs are absorbed forward into the following 1x1 conv (or the
/// head linear). The result computes the same function and has no BN nodes
/// and no small branches.
std::pair<LayerGraph, ModelWeights> reparam_model(const LayerGraph& g, const ModelWeights& w);

/// Weight container: magic "RLKW", u32 version, u64 JSON header length, JSON
/// header (tensor directory + graph), little-endian f32 payload, CRC32 of
/// the payload. Round-trips bit-exactly.
void save(const LayerGraph& g, const ModelWeights& w, const std::string& path);
std::pair<LayerGraph, ModelWeights> load(const std::string& path);

uint32_t crc32(const void* data, size_t len);

}  // namespace rlk
