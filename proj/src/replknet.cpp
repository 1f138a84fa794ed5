#include "rlk/replknet.hpp"

#include <cmath>

#include <json.hpp>

namespace rlk {

using nlohmann::json;

// ---------------------------------------------------------------- ArchSpec

void ArchSpec::validate() const {
    for (int s = 0; s < 4; ++s) {
        if (blocks[s] < 1) throw param_error("block counts must be >= 1");
        if (channels[s] < 1) throw param_error("channel widths must be >= 1");
        if (kernels[s] < 1 || kernels[s] % 2 == 0)
            throw param_error("stage kernels must be odd and positive");
    }
    if (small_kernel < 0) throw param_error("small_kernel must be 0 (none) or a positive odd int");
    if (small_kernel > 0) {
        if (small_kernel % 2 == 0) throw param_error("small_kernel must be odd");
        const int kmin = *std::min_element(kernels.begin(), kernels.end());
        if (small_kernel >= kmin)
            throw param_error("small_kernel must be smaller than every stage kernel");
    }
    if (!(ffn_ratio > 0.0f)) throw param_error("ffn_ratio must be positive");
    if (!(dw_expansion > 0.0f)) throw param_error("dw_expansion must be positive");
    for (int s = 0; s < 4; ++s) {
        const double d = static_cast<double>(dw_expansion) * channels[s];
        if (std::fabs(d - std::round(d)) > 1e-6)
            throw param_error("dw_expansion * C must be integral per stage");
    }
    if (in_channels < 1) throw param_error("in_channels must be >= 1");
    if (with_head && num_classes < 1) throw param_error("head requires num_classes >= 1");
}

int ArchSpec::dw_channels(int stage) const {
    return static_cast<int>(std::lround(static_cast<double>(dw_expansion) * channels[stage]));
}

ArchSpec ArchSpec::from_json(const std::string& text) {
    json j = json::parse(text);
    ArchSpec a;
    auto arr4 = [&](const char* key, std::array<int, 4>& out) {
        if (!j.contains(key)) throw param_error(std::string("arch json missing key ") + key);
        const auto& v = j.at(key);
        if (!v.is_array() || v.size() != 4)
            throw param_error(std::string("arch json key ") + key + " must be a 4-array");
        for (int i = 0; i < 4; ++i) out[i] = v[i].get<int>();
    };
    arr4("B", a.blocks);
    arr4("C", a.channels);
    arr4("K", a.kernels);
    if (j.contains("small_kernel") && !j["small_kernel"].is_null())
        a.small_kernel = j["small_kernel"].get<int>();
    else if (j.contains("small_kernel"))
        a.small_kernel = 0;
    if (j.contains("ffn_ratio")) a.ffn_ratio = j["ffn_ratio"].get<float>();
    if (j.contains("dw_expansion")) a.dw_expansion = j["dw_expansion"].get<float>();
    if (j.contains("in_channels")) a.in_channels = j["in_channels"].get<int>();
    if (j.contains("num_classes")) a.num_classes = j["num_classes"].get<int>();
    if (j.contains("with_head")) a.with_head = j["with_head"].get<bool>();
    a.validate();
    return a;
}

std::string ArchSpec::to_json() const {
    json j;
    j["B"] = blocks;
    j["C"] = channels;
    j["K"] = kernels;
    if (small_kernel > 0)
        j["small_kernel"] = small_kernel;
    else
        j["small_kernel"] = nullptr;
    j["ffn_ratio"] = ffn_ratio;
    j["dw_expansion"] = dw_expansion;
    j["in_channels"] = in_channels;
    j["num_classes"] = num_classes;
    j["with_head"] = with_head;
    return j.dump(2);
}

// ------------------------------------------------------------- graph types

const char* node_kind_name(NodeKind k) {
    switch (k) {
        case NodeKind::input: return "input";
        case NodeKind::conv: return "conv";
        case NodeKind::bn: return "bn";
        case NodeKind::relu: return "relu";
        case NodeKind::gelu: return "gelu";
        case NodeKind::add: return "add";
        case NodeKind::gap: return "gap";
        case NodeKind::linear: return "linear";
    }
    return "?";
}

NodeKind node_kind_from_string(const std::string& s) {
    for (NodeKind k : {NodeKind::input, NodeKind::conv, NodeKind::bn, NodeKind::relu,
                       NodeKind::gelu, NodeKind::add, NodeKind::gap, NodeKind::linear})
        if (s == node_kind_name(k)) return k;
    throw io_error("unknown node kind '" + s + "'");
}

int64_t LayerGraph::bn_count() const {
    int64_t n = 0;
    for (const auto& node : nodes) n += node.kind == NodeKind::bn;
    return n;
}

int64_t NamedTensor::size() const {
    int64_t s = 1;
    for (int64_t d : shape) s *= d;
    return s;
}

void ModelWeights::put(std::string name, std::vector<int64_t> shape, std::vector<float> data) {
    int64_t want = 1;
    for (int64_t d : shape) want *= d;
    if (want != static_cast<int64_t>(data.size()))
        throw param_error("weight '" + name + "': shape/data size mismatch");
    auto it = index_.find(name);
    if (it != index_.end()) {
        tensors_[it->second] = {std::move(name), std::move(shape), std::move(data)};
        return;
    }
    index_.emplace(name, tensors_.size());
    tensors_.push_back({std::move(name), std::move(shape), std::move(data)});
}

bool ModelWeights::has(const std::string& name) const { return index_.count(name) != 0; }

const NamedTensor& ModelWeights::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw error("missing weight '" + name + "'");
    return tensors_[it->second];
}

NamedTensor& ModelWeights::get_mut(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw error("missing weight '" + name + "'");
    return tensors_[it->second];
}

// ---------------------------------------------------------------- builder

namespace {

struct Builder {
    LayerGraph g;

    int emit(Node n) {
        g.nodes.push_back(std::move(n));
        return static_cast<int>(g.nodes.size()) - 1;
    }
    int conv(int input, const ConvSpec& spec, const std::string& name) {
        Node n;
        n.kind = NodeKind::conv;
        n.input = input;
        n.spec = spec;
        n.param = name;
        return emit(std::move(n));
    }
    int bn(int input, int channels, const std::string& name) {
        Node n;
        n.kind = NodeKind::bn;
        n.input = input;
        n.channels = channels;
        n.param = name;
        return emit(std::move(n));
    }
    int unary(NodeKind k, int input) {
        Node n;
        n.kind = k;
        n.input = input;
        return emit(std::move(n));
    }
    int add(int a, int b) {
        Node n;
        n.kind = NodeKind::add;
        n.input = a;
        n.input2 = b;
        return emit(std::move(n));
    }
    int conv_bn(int input, const ConvSpec& spec, const std::string& name) {
        return bn(conv(input, spec, name), spec.out_channels, name + ".bn");
    }
    int conv_bn_relu(int input, const ConvSpec& spec, const std::string& name) {
        return unary(NodeKind::relu, conv_bn(input, spec, name));
    }
};

ConvSpec dense_spec(int in, int out, int kernel, int stride) {
    ConvSpec s;
    s.kernel = kernel;
    s.stride = stride;
    s.dilation = 1;
    s.groups = 1;
    s.in_channels = in;
    s.out_channels = out;
    s.padding = s.same_padding();
    return s;
}

ConvSpec dw_spec(int channels, int kernel, int stride) {
    ConvSpec s;
    s.kernel = kernel;
    s.stride = stride;
    s.dilation = 1;
    s.groups = channels;
    s.in_channels = channels;
    s.out_channels = channels;
    s.padding = s.same_padding();
    return s;
}

ConvSpec pw_spec(int in, int out) {
    ConvSpec s;
    s.kernel = 1;
    s.stride = 1;
    s.padding = 0;
    s.dilation = 1;
    s.groups = 1;
    s.in_channels = in;
    s.out_channels = out;
    return s;
}

}  // namespace

LayerGraph build(const ArchSpec& arch) {
    arch.validate();
    Builder b;
    b.g.in_channels = arch.in_channels;
    b.g.with_head = arch.with_head;
    b.g.num_classes = arch.with_head ? arch.num_classes : 0;

    int cur = b.emit(Node{});  // input
    const int c1 = arch.channels[0];

    // Stem: 3x3 s2, DW 3x3, 1x1, DW 3x3 s2 -> total 4x downsampling.
    cur = b.conv_bn_relu(cur, dense_spec(arch.in_channels, c1, 3, 2), "stem.conv0");
    cur = b.conv_bn_relu(cur, dw_spec(c1, 3, 1), "stem.dw1");
    cur = b.conv_bn_relu(cur, pw_spec(c1, c1), "stem.pw1");
    cur = b.conv_bn_relu(cur, dw_spec(c1, 3, 2), "stem.dw2");

    for (int s = 0; s < 4; ++s) {
        const int c = arch.channels[s];
        const int d = arch.dw_channels(s);
        const int k = arch.kernels[s];
        const int f = static_cast<int>(std::lround(static_cast<double>(arch.ffn_ratio) * c));
        for (int blk = 0; blk < arch.blocks[s]; ++blk) {
            const std::string base = "s" + std::to_string(s) + ".b" + std::to_string(blk);

            // RepLK block: shortcut around 1x1 -> DW large K -> 1x1.
            int shortcut = cur;
            cur = b.conv_bn_relu(cur, pw_spec(c, d), base + ".pw1");
            if (arch.small_kernel > 0) {
                const int large = b.conv_bn(cur, dw_spec(d, k, 1), base + ".dw.large");
                const int small = b.conv_bn(cur, dw_spec(d, arch.small_kernel, 1),
                                            base + ".dw.small");
                cur = b.add(large, small);
            } else {
                cur = b.conv_bn(cur, dw_spec(d, k, 1), base + ".dw.large");
            }
            cur = b.unary(NodeKind::relu, cur);
            cur = b.conv_bn(cur, pw_spec(d, c), base + ".pw2");  // feeds the add, no relu
            cur = b.add(cur, shortcut);

            // ConvFFN block: shortcut around BN -> 1x1 expand -> GELU -> 1x1.
            shortcut = cur;
            cur = b.bn(cur, c, base + ".ffn.pre_bn");
            cur = b.conv_bn(cur, pw_spec(c, f), base + ".ffn.pw1");
            cur = b.unary(NodeKind::gelu, cur);
            cur = b.conv_bn(cur, pw_spec(f, c), base + ".ffn.pw2");
            cur = b.add(cur, shortcut);
        }
        if (s < 3) {
            const std::string base = "t" + std::to_string(s);
            cur = b.conv_bn_relu(cur, pw_spec(c, arch.channels[s + 1]), base + ".pw");
            cur = b.conv_bn_relu(cur, dw_spec(arch.channels[s + 1], 3, 2), base + ".dw");
        }
    }

    if (arch.with_head) {
        cur = b.bn(cur, arch.channels[3], "head.bn");
        cur = b.unary(NodeKind::gap, cur);
        Node fc;
        fc.kind = NodeKind::linear;
        fc.input = cur;
        fc.features_in = arch.channels[3];
        fc.features_out = arch.num_classes;
        fc.param = "head.fc";
        b.emit(std::move(fc));
    }
    return b.g;
}

LayerGraph build_conv_stack(int channels, int kernel, int layers, bool with_relu) {
    if (channels < 1 || layers < 1) throw param_error("stack needs channels >= 1, layers >= 1");
    Builder b;
    b.g.in_channels = channels;
    int cur = b.emit(Node{});
    for (int l = 0; l < layers; ++l) {
        cur = b.conv(cur, dw_spec(channels, kernel, 1), "stack." + std::to_string(l));
        if (with_relu) cur = b.unary(NodeKind::relu, cur);
    }
    return b.g;
}

// ------------------------------------------------------------ weights init

ModelWeights init_random(const LayerGraph& g, uint64_t seed) {
    Rng rng(seed);
    ModelWeights w;
    auto normal_block = [&](int64_t count) {
        std::vector<float> v(static_cast<size_t>(count));
        for (auto& x : v) x = rng.normal(0.0f, 0.02f);
        return v;
    };
    for (const Node& n : g.nodes) {
        switch (n.kind) {
            case NodeKind::conv: {
                const auto& s = n.spec;
                const int64_t cnt = static_cast<int64_t>(s.out_channels) *
                                    (s.in_channels / s.groups) * s.kernel * s.kernel;
                w.put(n.param + ".weight",
                      {s.out_channels, s.in_channels / s.groups, s.kernel, s.kernel},
                      normal_block(cnt));
                if (n.has_bias)
                    w.put(n.param + ".bias", {s.out_channels},
                          std::vector<float>(s.out_channels, 0.0f));
                break;
            }
            case NodeKind::bn: {
                w.put(n.param + ".gamma", {n.channels}, std::vector<float>(n.channels, 1.0f));
                w.put(n.param + ".beta", {n.channels}, std::vector<float>(n.channels, 0.0f));
                w.put(n.param + ".mean", {n.channels}, std::vector<float>(n.channels, 0.0f));
                w.put(n.param + ".var", {n.channels}, std::vector<float>(n.channels, 1.0f));
                break;
            }
            case NodeKind::linear: {
                w.put(n.param + ".weight", {n.features_out, n.features_in},
                      normal_block(static_cast<int64_t>(n.features_out) * n.features_in));
                w.put(n.param + ".bias", {n.features_out},
                      std::vector<float>(n.features_out, 0.0f));
                break;
            }
            default: break;
        }
    }
    return w;
}

// ---------------------------------------------------------------- forward

namespace {

ConvWeights conv_weights_of(const Node& n, const ModelWeights& w) {
    const NamedTensor& t = w.get(n.param + ".weight");
    const auto& s = n.spec;
    const Shape want{s.out_channels, s.in_channels / s.groups, s.kernel, s.kernel};
    if (t.shape.size() != 4 || t.shape[0] != want.n || t.shape[1] != want.c ||
        t.shape[2] != want.h || t.shape[3] != want.w)
        throw shape_error("weight '" + t.name + "' does not match conv spec " + want.str());
    ConvWeights cw;
    cw.w = Tensor(want);
    std::copy(t.data.begin(), t.data.end(), cw.w.data());
    if (n.has_bias) cw.bias = w.get(n.param + ".bias").data;
    return cw;
}

BNParams bn_params_of(const Node& n, const ModelWeights& w) {
    BNParams bn;
    bn.gamma = w.get(n.param + ".gamma").data;
    bn.beta = w.get(n.param + ".beta").data;
    bn.mean = w.get(n.param + ".mean").data;
    bn.var = w.get(n.param + ".var").data;
    bn.eps = n.bn_eps;
    bn.validate();
    if (bn.channels() != n.channels) throw shape_error("BN '" + n.param + "' channel mismatch");
    return bn;
}

Tensor linear_forward(const Node& n, const ModelWeights& w, const Tensor& x) {
    if (x.shape().h != 1 || x.shape().w != 1 || x.shape().c != n.features_in)
        throw shape_error("linear expects (n, " + std::to_string(n.features_in) +
                          ", 1, 1), got " + x.shape().str());
    const NamedTensor& wt = w.get(n.param + ".weight");
    const NamedTensor& bt = w.get(n.param + ".bias");
    Tensor out({x.shape().n, n.features_out, 1, 1});
    for (int64_t b = 0; b < x.shape().n; ++b) {
        for (int o = 0; o < n.features_out; ++o) {
            double acc = bt.data[o];
            for (int c = 0; c < n.features_in; ++c)
                acc += static_cast<double>(wt.data[static_cast<int64_t>(o) * n.features_in + c]) *
                       x.at(b, c, 0, 0);
            out.at(b, o, 0, 0) = static_cast<float>(acc);
        }
    }
    return out;
}

std::vector<Tensor> run_graph(const LayerGraph& g, const ModelWeights& w, const Tensor& x,
                              Backend backend, bool retain) {
    if (g.nodes.empty() || g.nodes[0].kind != NodeKind::input)
        throw error("graph must start with an input node");
    if (x.shape().c != g.in_channels)
        throw shape_error("input has " + std::to_string(x.shape().c) + " channels, graph expects " +
                          std::to_string(g.in_channels));
    if (g.with_head && (x.shape().h % 32 != 0 || x.shape().w % 32 != 0))
        throw shape_error("head-enabled models need spatial dims divisible by 32, got " +
                          x.shape().str());

    const int n_nodes = static_cast<int>(g.nodes.size());
    std::vector<int> last_use(n_nodes, n_nodes - 1);
    if (!retain) {
        for (int i = 0; i < n_nodes; ++i) {
            if (g.nodes[i].input >= 0) last_use[g.nodes[i].input] = i;
            if (g.nodes[i].input2 >= 0) last_use[g.nodes[i].input2] = i;
        }
    }

    std::vector<Tensor> vals(n_nodes);
    for (int i = 0; i < n_nodes; ++i) {
        const Node& n = g.nodes[i];
        switch (n.kind) {
            case NodeKind::input: vals[i] = x; break;
            case NodeKind::conv:
                vals[i] = conv2d(vals[n.input], conv_weights_of(n, w), n.spec, backend);
                break;
            case NodeKind::bn: vals[i] = batchnorm(vals[n.input], bn_params_of(n, w)); break;
            case NodeKind::relu: vals[i] = relu(vals[n.input]); break;
            case NodeKind::gelu: vals[i] = gelu(vals[n.input]); break;
            case NodeKind::add: vals[i] = add(vals[n.input], vals[n.input2]); break;
            case NodeKind::gap: vals[i] = global_avg_pool(vals[n.input]); break;
            case NodeKind::linear: vals[i] = linear_forward(n, w, vals[n.input]); break;
        }
        if (!retain) {
            if (n.input >= 0 && last_use[n.input] == i && n.input != n_nodes - 1)
                vals[n.input] = Tensor();
            if (n.input2 >= 0 && last_use[n.input2] == i && n.input2 != n_nodes - 1)
                vals[n.input2] = Tensor();
        }
    }
    return vals;
}

}  // namespace

Tensor forward(const LayerGraph& g, const ModelWeights& w, const Tensor& x, Backend b) {
    return run_graph(g, w, x, b, false).back();
}

std::vector<Tensor> forward_all(const LayerGraph& g, const ModelWeights& w, const Tensor& x,
                                Backend b) {
    return run_graph(g, w, x, b, true);
}

// ------------------------------------------------------------------ count

CountResult count(const LayerGraph& g, int resolution) {
    if (resolution < 1) throw param_error("resolution must be >= 1");
    CountResult r;
    struct Dims {
        int64_t c, h, w;
    };
    std::vector<Dims> dims(g.nodes.size());
    for (size_t i = 0; i < g.nodes.size(); ++i) {
        const Node& n = g.nodes[i];
        switch (n.kind) {
            case NodeKind::input: dims[i] = {g.in_channels, resolution, resolution}; break;
            case NodeKind::conv: {
                const Dims in = dims[n.input];
                const Dims out{n.spec.out_channels, n.spec.out_dim(in.h), n.spec.out_dim(in.w)};
                r.params += params_of(n.spec, n.has_bias);
                r.macs += macs_of(n.spec, out.h, out.w, 1);
                dims[i] = out;
                break;
            }
            case NodeKind::bn:
                r.params += 2 * static_cast<int64_t>(n.channels);  // gamma and beta
                dims[i] = dims[n.input];
                break;
            case NodeKind::relu:
            case NodeKind::gelu:
            case NodeKind::add: dims[i] = dims[n.input]; break;
            case NodeKind::gap: dims[i] = {dims[n.input].c, 1, 1}; break;
            case NodeKind::linear:
                r.params += static_cast<int64_t>(n.features_out) * n.features_in + n.features_out;
                r.macs += static_cast<int64_t>(n.features_out) * n.features_in;
                dims[i] = {n.features_out, 1, 1};
                break;
        }
    }
    return r;
}

// ----------------------------------------------------------- reparam_model

namespace {

// Absorbs an affine per-channel transform a*x+b sitting on the input of a
// 1x1 dense conv into the conv itself. Exact because every tap always sees
// real input (no padding).
void fold_input_affine(ConvWeights& cw, const std::vector<float>& a, const std::vector<float>& b) {
    const Shape s = cw.w.shape();
    if (cw.bias.empty()) cw.bias.assign(static_cast<size_t>(s.n), 0.0f);
    for (int64_t oc = 0; oc < s.n; ++oc) {
        for (int64_t ic = 0; ic < s.c; ++ic) {
            float& wv = cw.w.at(oc, ic, 0, 0);
            cw.bias[oc] += wv * b[ic];
            wv *= a[ic];
        }
    }
}

std::vector<float> bn_shift(const BNParams& bn, const std::vector<float>& scale) {
    std::vector<float> b(scale.size());
    for (size_t c = 0; c < b.size(); ++c) b[c] = bn.beta[c] - bn.mean[c] * scale[c];
    return b;
}

}  // namespace

std::pair<LayerGraph, ModelWeights> reparam_model(const LayerGraph& g, const ModelWeights& w) {
    const int n_nodes = static_cast<int>(g.nodes.size());
    std::vector<std::vector<int>> consumers(n_nodes);
    for (int i = 0; i < n_nodes; ++i) {
        if (g.nodes[i].input >= 0) consumers[g.nodes[i].input].push_back(i);
        if (g.nodes[i].input2 >= 0) consumers[g.nodes[i].input2].push_back(i);
    }

    auto is_branch_conv_bn = [&](int bn_idx) {
        if (bn_idx < 0 || g.nodes[bn_idx].kind != NodeKind::bn) return false;
        if (consumers[bn_idx].size() != 1) return false;
        const int c = g.nodes[bn_idx].input;
        return c >= 0 && g.nodes[c].kind == NodeKind::conv && consumers[c].size() == 1;
    };

    struct Merge {
        int large_conv, large_bn, small_conv, small_bn;
    };
    std::vector<char> skip(n_nodes, 0);
    std::unordered_map<int, Merge> merges;        // add node -> branch pair
    std::unordered_map<int, int> fused_conv_bn;   // bn node -> conv it folds into
    std::unordered_map<int, int> folded_into;     // conv/linear node -> standalone bn on its input

    // Parallel-branch pattern: add(bn(convA(x)), bn(convB(x))).
    for (int i = 0; i < n_nodes; ++i) {
        const Node& n = g.nodes[i];
        if (n.kind != NodeKind::add) continue;
        if (!is_branch_conv_bn(n.input) || !is_branch_conv_bn(n.input2)) continue;
        int cu = g.nodes[n.input].input;
        int cv = g.nodes[n.input2].input;
        if (g.nodes[cu].input != g.nodes[cv].input) continue;
        const ConvSpec& su = g.nodes[cu].spec;
        const ConvSpec& sv = g.nodes[cv].spec;
        if (su.stride != sv.stride || su.dilation != sv.dilation || su.groups != sv.groups ||
            su.in_channels != sv.in_channels || su.out_channels != sv.out_channels)
            continue;
        if (su.kernel % 2 == 0 || sv.kernel % 2 == 0) continue;
        if (su.padding != su.same_padding() || sv.padding != sv.same_padding()) continue;
        Merge m;
        if (su.kernel >= sv.kernel)
            m = {cu, n.input, cv, n.input2};
        else
            m = {cv, n.input2, cu, n.input};
        merges[i] = m;
        skip[m.large_conv] = skip[m.large_bn] = skip[m.small_conv] = skip[m.small_bn] = 1;
    }

    // Conv followed by its own BN.
    for (int i = 0; i < n_nodes; ++i) {
        const Node& n = g.nodes[i];
        if (n.kind != NodeKind::bn || skip[i]) continue;
        const int c = n.input;
        if (c >= 0 && g.nodes[c].kind == NodeKind::conv && !skip[c] &&
            consumers[c].size() == 1) {
            fused_conv_bn[i] = c;
            skip[c] = 1;
        }
    }

    // Standalone BN absorbed forward into a 1x1 dense conv, or through the
    // global pool into the head linear.
    std::vector<char> bn_aliased(n_nodes, 0);
    for (int i = 0; i < n_nodes; ++i) {
        const Node& n = g.nodes[i];
        if (n.kind != NodeKind::bn || skip[i] || fused_conv_bn.count(i)) continue;
        if (consumers[i].size() != 1) continue;
        const int k = consumers[i][0];
        const Node& cons = g.nodes[k];
        if (cons.kind == NodeKind::conv && cons.spec.kernel == 1 && cons.spec.stride == 1 &&
            cons.spec.padding == 0 && cons.spec.groups == 1) {
            folded_into[k] = i;
            bn_aliased[i] = 1;
        } else if (cons.kind == NodeKind::gap && consumers[k].size() == 1 &&
                   g.nodes[consumers[k][0]].kind == NodeKind::linear) {
            folded_into[consumers[k][0]] = i;
            bn_aliased[i] = 1;
        }
    }

    LayerGraph ng;
    ng.in_channels = g.in_channels;
    ng.with_head = g.with_head;
    ng.num_classes = g.num_classes;
    ModelWeights nw;
    std::vector<int> remap(n_nodes, -1);

    auto emit = [&](Node n) {
        ng.nodes.push_back(std::move(n));
        return static_cast<int>(ng.nodes.size()) - 1;
    };
    auto put_conv = [&](const std::string& name, const FusedKernel& k) {
        const Shape s = k.w.shape();
        nw.put(name + ".weight", {s.n, s.c, s.h, s.w},
               std::vector<float>(k.w.data(), k.w.data() + k.w.size()));
        nw.put(name + ".bias", {s.n}, k.bias);
    };
    auto input_folded_weights = [&](int conv_idx) {
        ConvWeights cw = conv_weights_of(g.nodes[conv_idx], w);
        auto it = folded_into.find(conv_idx);
        if (it != folded_into.end()) {
            const BNParams bn = bn_params_of(g.nodes[it->second], w);
            const std::vector<float> a = bn_scale(bn);
            fold_input_affine(cw, a, bn_shift(bn, a));
        }
        return cw;
    };

    for (int i = 0; i < n_nodes; ++i) {
        const Node& n = g.nodes[i];
        if (skip[i]) continue;
        switch (n.kind) {
            case NodeKind::input: remap[i] = emit(Node{}); break;
            case NodeKind::conv: {
                // A conv that kept no BN (already deploy-form).
                Node c = n;
                c.input = remap[n.input];
                ConvWeights cw = input_folded_weights(i);
                if (cw.bias.empty()) cw.bias.assign(n.spec.out_channels, 0.0f);
                c.has_bias = true;
                remap[i] = emit(c);
                put_conv(n.param, cw);
                break;
            }
            case NodeKind::bn: {
                auto f = fused_conv_bn.find(i);
                if (f != fused_conv_bn.end()) {
                    const Node& cn = g.nodes[f->second];
                    const FusedKernel fused =
                        fuse_bn(input_folded_weights(f->second), bn_params_of(n, w));
                    Node c = cn;
                    c.input = remap[cn.input];
                    c.has_bias = true;
                    remap[i] = emit(c);
                    put_conv(cn.param, fused);
                } else if (bn_aliased[i]) {
                    remap[i] = remap[n.input];
                } else {
                    Node c = n;
                    c.input = remap[n.input];
                    remap[i] = emit(c);
                    for (const char* suffix : {".gamma", ".beta", ".mean", ".var"}) {
                        const NamedTensor& t = w.get(n.param + suffix);
                        nw.put(t.name, t.shape, t.data);
                    }
                }
                break;
            }
            case NodeKind::add: {
                auto m = merges.find(i);
                if (m != merges.end()) {
                    BranchedConv bc;
                    bc.large = {conv_weights_of(g.nodes[m->second.large_conv], w),
                                bn_params_of(g.nodes[m->second.large_bn], w)};
                    bc.small = ConvBN{conv_weights_of(g.nodes[m->second.small_conv], w),
                                      bn_params_of(g.nodes[m->second.small_bn], w)};
                    const FusedKernel fused = merge_branches(bc);
                    const Node& lc = g.nodes[m->second.large_conv];
                    Node c = lc;
                    c.input = remap[lc.input];
                    c.has_bias = true;
                    remap[i] = emit(c);
                    put_conv(lc.param, fused);
                } else {
                    Node c = n;
                    c.input = remap[n.input];
                    c.input2 = remap[n.input2];
                    remap[i] = emit(c);
                }
                break;
            }
            case NodeKind::linear: {
                Node c = n;
                c.input = remap[n.input];
                remap[i] = emit(c);
                const NamedTensor& wt = w.get(n.param + ".weight");
                const NamedTensor& bt = w.get(n.param + ".bias");
                std::vector<float> wd = wt.data;
                std::vector<float> bd = bt.data;
                auto it = folded_into.find(i);
                if (it != folded_into.end()) {
                    const BNParams bn = bn_params_of(g.nodes[it->second], w);
                    const std::vector<float> a = bn_scale(bn);
                    const std::vector<float> sh = bn_shift(bn, a);
                    for (int o = 0; o < n.features_out; ++o) {
                        for (int ic = 0; ic < n.features_in; ++ic) {
                            float& v = wd[static_cast<size_t>(o) * n.features_in + ic];
                            bd[o] += v * sh[ic];
                            v *= a[ic];
                        }
                    }
                }
                nw.put(wt.name, wt.shape, std::move(wd));
                nw.put(bt.name, bt.shape, std::move(bd));
                break;
            }
            default: {
                Node c = n;
                c.input = remap[n.input];
                remap[i] = emit(c);
                break;
            }
        }
    }
    return {std::move(ng), std::move(nw)};
}

}  // namespace rlk
