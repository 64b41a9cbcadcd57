#pragma once
#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>
#include <zlib.h>

#include "rpk/net.hpp"

namespace rpk {

// ============================================================================
// Model container (.rpk)
// ============================================================================
//
// Layout:   "RPK1" | u32-LE header length | JSON header | payload
// The header carries the network description and a tensor directory
// (name/dtype/shape/offset/length into the payload); the payload is the
// tensors' raw little-endian row-major bytes, concatenated in directory
// order. The header also records payload length and CRC32 so truncation and
// bit corruption are told apart when loading. JSON keys serialize sorted, so
// saving the same model twice yields identical bytes.

using json = nlohmann::json;

template <class S>
struct Model {
    using scalar_type = S;

    std::string name;
    Network net;
    WeightStore<S> weights;
    json expansion; // description of factored units, null when not expanded
    json meta;      // free-form provenance (stage settings etc.), null if unused

    friend bool operator==(const Model& a, const Model& b) {
        if (a.name != b.name || a.net != b.net || a.expansion != b.expansion ||
            a.meta != b.meta)
            return false;
        if (a.weights.entries.size() != b.weights.entries.size()) return false;
        for (const auto& [k, t] : a.weights.entries) {
            if (!b.weights.has(k)) return false;
            const auto& u = b.weights.at(k);
            if (t.shape() != u.shape()) return false;
            if (std::memcmp(t.data(), u.data(), t.size() * sizeof(S)) != 0) return false;
        }
        return true;
    }
};

using AnyModel = std::variant<Model<float>, Model<double>>;

// ----------------------------------------------------------------------------
// Network <-> JSON
// ----------------------------------------------------------------------------

inline json layer_to_json(const LayerSpec& l) {
    json j;
    j["kind"] = layer_kind_name(l.kind);
    if (l.parameterized()) {
        j["in"] = l.in;
        j["out"] = l.out;
        j["bias"] = l.bias;
    }
    if (l.kind == LayerKind::Conv2d) {
        j["kernel"] = l.kernel;
        j["stride"] = l.stride;
        j["padding"] = l.padding;
        j["groups"] = l.groups;
    }
    if (l.kind == LayerKind::MaxPool2d || l.kind == LayerKind::AvgPool2d) {
        j["kernel"] = l.kernel;
        j["stride"] = l.stride;
    }
    return j;
}

inline LayerKind layer_kind_from_name(const std::string& s) {
    for (LayerKind k : {LayerKind::Conv2d, LayerKind::Linear, LayerKind::ReLU,
                        LayerKind::MaxPool2d, LayerKind::AvgPool2d, LayerKind::Flatten,
                        LayerKind::Softmax})
        if (s == layer_kind_name(k)) return k;
    throw FormatError("unknown layer kind: " + s);
}

// Only `kind` plus the dimensions a layer cannot live without are required;
// stride, padding, groups and bias fall back to the LayerSpec defaults so
// hand-written configs stay short.
inline LayerSpec layer_from_json(const json& j) {
    LayerSpec l;
    l.kind = layer_kind_from_name(j.at("kind").get<std::string>());
    if (l.kind == LayerKind::Conv2d || l.kind == LayerKind::Linear) {
        l.in = j.at("in").get<std::size_t>();
        l.out = j.at("out").get<std::size_t>();
        l.bias = j.value("bias", true);
    }
    if (l.kind == LayerKind::Conv2d) {
        l.kernel = j.at("kernel").get<std::size_t>();
        l.stride = j.value("stride", std::size_t{1});
        l.padding = j.value("padding", std::size_t{0});
        l.groups = j.value("groups", std::size_t{1});
    }
    if (l.kind == LayerKind::MaxPool2d || l.kind == LayerKind::AvgPool2d) {
        l.kernel = j.at("kernel").get<std::size_t>();
        l.stride = j.value("stride", l.kernel);
    }
    return l;
}

inline json network_to_json(const Network& net) {
    json j;
    j["name"] = net.name;
    j["input_shape"] = net.input_shape;
    j["layers"] = json::array();
    for (const auto& l : net.layers) j["layers"].push_back(layer_to_json(l));
    return j;
}

inline Network network_from_json(const json& j) {
    Network net;
    net.name = j.at("name").get<std::string>();
    net.input_shape = j.at("input_shape").get<Shape>();
    for (const auto& lj : j.at("layers")) net.layers.push_back(layer_from_json(lj));
    return net;
}

// ----------------------------------------------------------------------------
// Container bytes
// ----------------------------------------------------------------------------

namespace detail {

inline constexpr char kMagic[4] = {'R', 'P', 'K', '1'};

inline std::uint32_t crc32_of(const unsigned char* data, std::size_t len) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    while (len > 0) {
        const uInt chunk = static_cast<uInt>(std::min<std::size_t>(len, 1u << 30));
        crc = ::crc32(crc, data, chunk);
        data += chunk;
        len -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

inline void put_u32le(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
    out.push_back(static_cast<unsigned char>((v >> 24) & 0xff));
}

inline std::uint32_t get_u32le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) |
           (static_cast<std::uint32_t>(p[3]) << 24);
}

} // namespace detail

template <class S>
std::vector<unsigned char> model_to_bytes(const Model<S>& model) {
    validate_weights(model.net, model.weights);

    // Payload and tensor directory, in the store's (sorted) key order.
    std::vector<unsigned char> payload;
    json dir = json::array();
    for (const auto& [name, t] : model.weights.entries) {
        const std::size_t bytes = t.size() * sizeof(S);
        json e;
        e["name"] = name;
        e["dtype"] = dtype_name(dtype_of<S>());
        e["shape"] = t.shape();
        e["offset"] = payload.size();
        e["length"] = bytes;
        dir.push_back(std::move(e));
        const std::size_t at = payload.size();
        payload.resize(at + bytes);
        std::memcpy(payload.data() + at, t.data(), bytes); // host is little-endian
    }

    json header;
    header["format"] = "rpk";
    header["version"] = 1;
    header["name"] = model.name;
    header["dtype"] = dtype_name(dtype_of<S>());
    header["network"] = network_to_json(model.net);
    header["tensors"] = std::move(dir);
    header["payload_length"] = payload.size();
    header["payload_crc32"] = detail::crc32_of(payload.data(), payload.size());
    if (!model.expansion.is_null()) header["expansion"] = model.expansion;
    if (!model.meta.is_null()) header["meta"] = model.meta;

    const std::string htext = header.dump();
    std::vector<unsigned char> out;
    out.reserve(12 + htext.size() + payload.size());
    out.insert(out.end(), detail::kMagic, detail::kMagic + 4);
    detail::put_u32le(out, static_cast<std::uint32_t>(htext.size()));
    detail::put_u32le(out, detail::crc32_of(
                               reinterpret_cast<const unsigned char*>(htext.data()),
                               htext.size()));
    out.insert(out.end(), htext.begin(), htext.end());
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

inline std::vector<unsigned char> model_to_bytes(const AnyModel& model) {
    return std::visit([](const auto& m) { return model_to_bytes(m); }, model);
}

namespace detail {

template <class S>
Model<S> model_from_header(const json& header, const unsigned char* payload,
                           std::size_t payload_len) {
    Model<S> m;
    m.name = header.at("name").get<std::string>();
    m.net = network_from_json(header.at("network"));
    if (header.contains("expansion")) m.expansion = header.at("expansion");
    if (header.contains("meta")) m.meta = header.at("meta");
    for (const auto& e : header.at("tensors")) {
        const auto name = e.at("name").get<std::string>();
        const auto dt = e.at("dtype").get<std::string>();
        if (dt != dtype_name(dtype_of<S>()))
            throw FormatError("tensor " + name + " dtype " + dt +
                              " disagrees with container dtype");
        const Shape shape = e.at("shape").get<Shape>();
        const std::size_t offset = e.at("offset").get<std::size_t>();
        const std::size_t length = e.at("length").get<std::size_t>();
        if (length != shape_size(shape) * sizeof(S))
            throw FormatError("tensor " + name + " length does not match its shape");
        if (offset + length > payload_len)
            throw FormatError("tensor " + name + " extends past the payload");
        Tensor<S> t(shape);
        std::memcpy(t.data(), payload + offset, length);
        m.weights.set(name, std::move(t));
    }
    validate_weights(m.net, m.weights);
    return m;
}

} // namespace detail

inline AnyModel model_from_bytes(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), detail::kMagic, 4) != 0)
        throw FormatError("not an rpk container");
    const std::uint32_t hlen = detail::get_u32le(bytes.data() + 4);
    const std::uint32_t want_hcrc = detail::get_u32le(bytes.data() + 8);
    if (12 + static_cast<std::size_t>(hlen) > bytes.size())
        throw FormatError("header extends past end of container");
    if (detail::crc32_of(bytes.data() + 12, hlen) != want_hcrc)
        throw FormatError("checksum mismatch: header does not match its recorded crc32");

    json header;
    try {
        header = json::parse(bytes.begin() + 12, bytes.begin() + 12 + hlen);
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed container header: ") + e.what());
    }

    std::size_t payload_len = 0;
    std::string dtype;
    try {
        if (header.at("format").get<std::string>() != "rpk")
            throw FormatError("not an rpk container");
        payload_len = header.at("payload_length").get<std::size_t>();
        dtype = header.at("dtype").get<std::string>();
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed container header: ") + e.what());
    }

    const std::size_t have = bytes.size() - 12 - hlen;
    if (have != payload_len)
        throw FormatError("payload length mismatch: header says " +
                          std::to_string(payload_len) + " bytes, container holds " +
                          std::to_string(have));
    const unsigned char* payload = bytes.data() + 12 + hlen;
    const std::uint32_t want_crc = header.at("payload_crc32").get<std::uint32_t>();
    const std::uint32_t got_crc = detail::crc32_of(payload, payload_len);
    if (want_crc != got_crc)
        throw FormatError("checksum mismatch: payload does not match its recorded crc32");

    try {
        if (dtype == "float32")
            return detail::model_from_header<float>(header, payload, payload_len);
        if (dtype == "float64")
            return detail::model_from_header<double>(header, payload, payload_len);
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed container header: ") + e.what());
    }
    throw FormatError("unknown container dtype: " + dtype);
}

// ----------------------------------------------------------------------------
// Files
// ----------------------------------------------------------------------------

inline void save_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path);
}

inline std::vector<unsigned char> load_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw IoError("cannot open: " + path);
    const std::streamsize n = f.tellg();
    f.seekg(0);
    std::vector<unsigned char> bytes(static_cast<std::size_t>(n));
    if (n > 0) f.read(reinterpret_cast<char*>(bytes.data()), n);
    if (!f) throw IoError("read failed: " + path);
    return bytes;
}

template <class S>
void save_model(const std::string& path, const Model<S>& model) {
    save_bytes(path, model_to_bytes(model));
}

inline void save_model(const std::string& path, const AnyModel& model) {
    std::visit([&](const auto& m) { save_model(path, m); }, model);
}

inline AnyModel load_model(const std::string& path) {
    return model_from_bytes(load_bytes(path));
}

// Dtype held by a loaded model.
inline DType model_dtype(const AnyModel& m) {
    return std::holds_alternative<Model<float>>(m) ? DType::Float32 : DType::Float64;
}

template <class S>
const Model<S>& model_as(const AnyModel& m) {
    if (!std::holds_alternative<Model<S>>(m))
        throw FormatError(std::string("model holds ") +
                          dtype_name(model_dtype(m)) + ", expected " +
                          dtype_name(dtype_of<S>()));
    return std::get<Model<S>>(m);
}

// Cast a model's weights to the other scalar width.
template <class To, class From>
Model<To> model_cast(const Model<From>& m) {
    Model<To> out;
    out.name = m.name;
    out.net = m.net;
    out.expansion = m.expansion;
    out.meta = m.meta;
    for (const auto& [k, t] : m.weights.entries) out.weights.set(k, cast<To>(t));
    return out;
}

} // namespace rpk
