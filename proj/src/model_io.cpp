#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "rlk/replknet.hpp"

static_assert(std::endian::native == std::endian::little,
              "weight container assumes a little-endian host");

namespace rlk {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'R', 'L', 'K', 'W'};
constexpr uint32_t kVersion = 1;

struct Crc32Table {
    uint32_t t[256];
    Crc32Table() {
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
    }
};

json node_to_json(const Node& n) {
    json j;
    j["kind"] = node_kind_name(n.kind);
    j["input"] = n.input;
    if (n.kind == NodeKind::add) j["input2"] = n.input2;
    if (!n.param.empty()) j["param"] = n.param;
    switch (n.kind) {
        case NodeKind::conv:
            j["spec"] = {{"kernel", n.spec.kernel},
                         {"stride", n.spec.stride},
                         {"padding", n.spec.padding},
                         {"dilation", n.spec.dilation},
                         {"groups", n.spec.groups},
                         {"in_channels", n.spec.in_channels},
                         {"out_channels", n.spec.out_channels}};
            j["has_bias"] = n.has_bias;
            break;
        case NodeKind::bn:
            j["channels"] = n.channels;
            j["eps"] = n.bn_eps;
            break;
        case NodeKind::linear:
            j["features_in"] = n.features_in;
            j["features_out"] = n.features_out;
            break;
        default: break;
    }
    return j;
}

Node node_from_json(const json& j) {
    Node n;
    n.kind = node_kind_from_string(j.at("kind").get<std::string>());
    n.input = j.at("input").get<int>();
    if (j.contains("input2")) n.input2 = j["input2"].get<int>();
    if (j.contains("param")) n.param = j["param"].get<std::string>();
    switch (n.kind) {
        case NodeKind::conv: {
            const json& s = j.at("spec");
            n.spec.kernel = s.at("kernel").get<int>();
            n.spec.stride = s.at("stride").get<int>();
            n.spec.padding = s.at("padding").get<int>();
            n.spec.dilation = s.at("dilation").get<int>();
            n.spec.groups = s.at("groups").get<int>();
            n.spec.in_channels = s.at("in_channels").get<int>();
            n.spec.out_channels = s.at("out_channels").get<int>();
            n.has_bias = j.at("has_bias").get<bool>();
            break;
        }
        case NodeKind::bn:
            n.channels = j.at("channels").get<int>();
            n.bn_eps = j.at("eps").get<float>();
            break;
        case NodeKind::linear:
            n.features_in = j.at("features_in").get<int>();
            n.features_out = j.at("features_out").get<int>();
            break;
        default: break;
    }
    return n;
}

void append_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u64(std::string& buf, uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t read_u32(const std::string& buf, size_t off) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[off + i]))
                                     << (8 * i);
    return v;
}

uint64_t read_u64(const std::string& buf, size_t off) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[off + i]))
                                     << (8 * i);
    return v;
}

}  // namespace

uint32_t crc32(const void* data, size_t len) {
    static const Crc32Table table;
    uint32_t c = 0xffffffffu;
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) c = table.t[(c ^ p[i]) & 0xff] ^ (c >> 8);
    return c ^ 0xffffffffu;
}

void save(const LayerGraph& g, const ModelWeights& w, const std::string& path) {
    json header;
    header["graph"] = {{"in_channels", g.in_channels},
                       {"with_head", g.with_head},
                       {"num_classes", g.num_classes}};
    json nodes = json::array();
    for (const Node& n : g.nodes) nodes.push_back(node_to_json(n));
    header["graph"]["nodes"] = std::move(nodes);

    json tensors = json::array();
    uint64_t offset = 0;
    for (const NamedTensor& t : w.all()) {
        tensors.push_back(
            {{"name", t.name}, {"shape", t.shape}, {"dtype", "f32"}, {"byte_offset", offset}});
        offset += static_cast<uint64_t>(t.size()) * 4;
    }
    header["tensors"] = std::move(tensors);
    const std::string header_text = header.dump();

    std::string payload;
    payload.reserve(offset);
    for (const NamedTensor& t : w.all()) {
        const size_t pos = payload.size();
        payload.resize(pos + t.data.size() * 4);
        std::memcpy(payload.data() + pos, t.data.data(), t.data.size() * 4);
    }

    std::string buf;
    buf.append(kMagic, 4);
    append_u32(buf, kVersion);
    append_u64(buf, header_text.size());
    buf += header_text;
    buf += payload;
    append_u32(buf, crc32(payload.data(), payload.size()));

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw io_error("cannot open '" + path + "' for writing");
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!os) throw io_error("write to '" + path + "' failed");
}

std::pair<LayerGraph, ModelWeights> load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

    if (buf.size() < 16) throw truncated_error("file too short for RLKW framing");
    if (std::memcmp(buf.data(), kMagic, 4) != 0) throw io_error("bad magic, not an RLKW file");
    const uint32_t version = read_u32(buf, 4);
    if (version != kVersion)
        throw version_error("unsupported container version " + std::to_string(version));
    const uint64_t header_len = read_u64(buf, 8);
    if (header_len > buf.size() || 16 + header_len + 4 > buf.size())
        throw truncated_error("header extends past end of file");

    json header;
    try {
        header = json::parse(buf.substr(16, header_len));
    } catch (const json::exception& e) {
        throw io_error(std::string("malformed header: ") + e.what());
    }

    LayerGraph g;
    const json& jg = header.at("graph");
    g.in_channels = jg.at("in_channels").get<int>();
    g.with_head = jg.at("with_head").get<bool>();
    g.num_classes = jg.at("num_classes").get<int>();
    for (const json& jn : jg.at("nodes")) g.nodes.push_back(node_from_json(jn));

    uint64_t payload_len = 0;
    for (const json& jt : header.at("tensors")) {
        uint64_t sz = 4;
        for (const auto& d : jt.at("shape")) sz *= d.get<uint64_t>();
        payload_len = std::max(payload_len, jt.at("byte_offset").get<uint64_t>() + sz);
    }
    const size_t payload_start = 16 + header_len;
    if (payload_start + payload_len + 4 != buf.size())
        throw truncated_error("payload size mismatch: expected " +
                              std::to_string(payload_start + payload_len + 4) + " bytes, file has " +
                              std::to_string(buf.size()));

    const uint32_t stored = read_u32(buf, payload_start + payload_len);
    const uint32_t actual = crc32(buf.data() + payload_start, payload_len);
    if (stored != actual) throw checksum_error("payload CRC32 mismatch");

    ModelWeights w;
    for (const json& jt : header.at("tensors")) {
        std::vector<int64_t> shape = jt.at("shape").get<std::vector<int64_t>>();
        int64_t count = 1;
        for (int64_t d : shape) count *= d;
        if (jt.at("dtype").get<std::string>() != "f32")
            throw io_error("unsupported dtype " + jt.at("dtype").get<std::string>());
        std::vector<float> data(static_cast<size_t>(count));
        std::memcpy(data.data(), buf.data() + payload_start + jt.at("byte_offset").get<uint64_t>(),
                    static_cast<size_t>(count) * 4);
        w.put(jt.at("name").get<std::string>(), std::move(shape), std::move(data));
    }
    return {std::move(g), std::move(w)};
}

}  // namespace rlk
