#pragma once
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "rpk/train.hpp"

namespace rpk {

// ============================================================================
// Dataset ingestion: IDX files and seeded synthetic blobs
// ============================================================================

namespace detail {

inline std::uint32_t read_u32be(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw FormatError(path + ": truncated IDX header");
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

inline std::vector<unsigned char> read_idx_payload(std::istream& in, std::size_t count,
                                                   const std::string& path) {
    std::vector<unsigned char> bytes(count);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(count));
    if (static_cast<std::size_t>(in.gcount()) != count)
        throw FormatError(path + ": truncated IDX payload");
    return bytes;
}

} // namespace detail

// IDX image file (magic 0x00000803: unsigned bytes, dims n,h,w) as float
// tensors [n,1,h,w] scaled to [0,1].
template <class S>
Tensor<S> load_idx_images(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    if (detail::read_u32be(in, path) != 0x00000803u)
        throw FormatError(path + ": not an IDX file");
    const std::size_t n = detail::read_u32be(in, path);
    const std::size_t h = detail::read_u32be(in, path);
    const std::size_t w = detail::read_u32be(in, path);
    const std::vector<unsigned char> bytes = detail::read_idx_payload(in, n * h * w, path);
    Tensor<S> out({n, 1, h, w});
    for (std::size_t i = 0; i < bytes.size(); ++i)
        out.data()[i] = static_cast<S>(bytes[i]) / static_cast<S>(255);
    return out;
}

// IDX label file (magic 0x00000801: unsigned bytes, dims n).
inline std::vector<std::size_t> load_idx_labels(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    if (detail::read_u32be(in, path) != 0x00000801u)
        throw FormatError(path + ": not an IDX file");
    const std::size_t n = detail::read_u32be(in, path);
    const std::vector<unsigned char> bytes = detail::read_idx_payload(in, n, path);
    return std::vector<std::size_t>(bytes.begin(), bytes.end());
}

template <class S>
Dataset<S> load_idx_dataset(const std::string& images_path, const std::string& labels_path) {
    Dataset<S> d;
    d.x = load_idx_images<S>(images_path);
    d.labels = load_idx_labels(labels_path);
    if (d.x.dim(0) != d.labels.size())
        throw ShapeError(images_path + " has " + std::to_string(d.x.dim(0)) + " images but " +
                         labels_path + " has " + std::to_string(d.labels.size()) + " labels");
    return d;
}

// ----------------------------------------------------------------------------
// Synthetic k-class Gaussian-blob images
// ----------------------------------------------------------------------------
//
// Each class gets a seeded template: a sum of random Gaussian bumps. Samples
// are the class template under a random toroidal shift plus pixel noise, so
// `noise` and `shift` tune task difficulty while classes stay balanced.

struct SyntheticSpec {
    std::size_t classes = 2;
    std::size_t per_class = 32;
    std::size_t channels = 1;
    std::size_t height = 12;
    std::size_t width = 12;
    double noise = 0.25; // per-pixel Gaussian noise stddev
    std::size_t shift = 2; // max |translation| per axis, wrap-around
};

namespace detail {

template <class S>
Tensor<S> blob_template(const SyntheticSpec& spec, std::size_t cls, std::uint64_t seed) {
    std::mt19937_64 rng(mix_seed(seed, 0x7e000000u + cls));
    std::uniform_real_distribution<double> ypos(0.0, static_cast<double>(spec.height));
    std::uniform_real_distribution<double> xpos(0.0, static_cast<double>(spec.width));
    std::uniform_real_distribution<double> amp(0.6, 1.0);
    std::uniform_real_distribution<double> width(static_cast<double>(spec.height) / 8.0,
                                                 static_cast<double>(spec.height) / 4.0);
    Tensor<S> t({spec.channels, spec.height, spec.width});
    for (std::size_t ch = 0; ch < spec.channels; ++ch)
        for (int bump = 0; bump < 3; ++bump) {
            const double cy = ypos(rng), cx = xpos(rng), a = amp(rng), sg = width(rng);
            for (std::size_t y = 0; y < spec.height; ++y)
                for (std::size_t x = 0; x < spec.width; ++x) {
                    const double dy = static_cast<double>(y) - cy;
                    const double dx = static_cast<double>(x) - cx;
                    t(ch, y, x) += static_cast<S>(
                        a * std::exp(-(dy * dy + dx * dx) / (2.0 * sg * sg)));
                }
        }
    return t;
}

inline std::size_t wrap_index(long v, std::size_t m) {
    const long r = v % static_cast<long>(m);
    return static_cast<std::size_t>(r < 0 ? r + static_cast<long>(m) : r);
}

} // namespace detail

template <class S>
Dataset<S> gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    if (spec.classes < 2) throw Error("synthetic task needs at least 2 classes");
    if (spec.per_class == 0 || spec.channels == 0 || spec.height == 0 || spec.width == 0)
        throw Error("synthetic spec has an empty dimension");
    if (spec.noise < 0) throw Error("synthetic noise must be non-negative");

    std::vector<Tensor<S>> templates;
    for (std::size_t c = 0; c < spec.classes; ++c)
        templates.push_back(detail::blob_template<S>(spec, c, seed));

    const std::size_t n = spec.classes * spec.per_class;
    Dataset<S> d;
    d.x = Tensor<S>({n, spec.channels, spec.height, spec.width});
    d.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t cls = i % spec.classes;
        d.labels[i] = cls;
        std::mt19937_64 rng(mix_seed(seed, 0x5a000000u + i));
        std::uniform_int_distribution<long> off(-static_cast<long>(spec.shift),
                                                static_cast<long>(spec.shift));
        const long dy = off(rng), dx = off(rng);
        std::normal_distribution<double> noise(0.0, spec.noise);
        const Tensor<S>& t = templates[cls];
        for (std::size_t ch = 0; ch < spec.channels; ++ch)
            for (std::size_t y = 0; y < spec.height; ++y)
                for (std::size_t x = 0; x < spec.width; ++x) {
                    const std::size_t sy =
                        detail::wrap_index(static_cast<long>(y) - dy, spec.height);
                    const std::size_t sx =
                        detail::wrap_index(static_cast<long>(x) - dx, spec.width);
                    d.x(i, ch, y, x) =
                        t(ch, sy, sx) + static_cast<S>(spec.noise == 0.0 ? 0.0 : noise(rng));
                }
    }
    ensure_finite(d.x, "synthetic dataset");
    return d;
}

} // namespace rpk
