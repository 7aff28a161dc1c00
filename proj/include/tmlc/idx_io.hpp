#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "tmlc/dataset.hpp"
#include "tmlc/errors.hpp"

// IDX image/label files (the MNIST container format): big-endian magic and
// dimensions, then raw unsigned bytes.

namespace tmlc {

namespace detail {

inline std::uint32_t read_be_u32(std::istream& in, std::size_t& offset) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (!in)
        throw FormatError("idx: unexpected end of file at byte " + std::to_string(offset));
    offset += 4;
    return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
           (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

inline void write_be_u32(std::ostream& out, std::uint32_t v) {
    unsigned char buf[4] = {static_cast<unsigned char>(v >> 24),
                            static_cast<unsigned char>(v >> 16),
                            static_cast<unsigned char>(v >> 8),
                            static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(buf), 4);
}

} // namespace detail

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

// Pixel values scale to [0,1]; images flatten to rows*cols features.
inline NoisyDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw FormatError("idx: cannot open " + images_path);
    std::size_t off = 0;
    const std::uint32_t magic = detail::read_be_u32(img, off);
    if (magic != kIdxImageMagic)
        throw FormatError("idx: bad image magic " + std::to_string(magic) + " at byte 0 in " +
                          images_path);
    const std::uint32_t n = detail::read_be_u32(img, off);
    const std::uint32_t rows = detail::read_be_u32(img, off);
    const std::uint32_t cols = detail::read_be_u32(img, off);
    const std::size_t d = std::size_t(rows) * cols;
    if (d == 0) throw FormatError("idx: zero image dimensions at byte 8 in " + images_path);

    NoisyDataset ds;
    ds.features = Tensor({n, d});
    ds.name = "idx";
    std::vector<unsigned char> buf(d);
    for (std::uint32_t i = 0; i < n; ++i) {
        img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(d));
        if (!img)
            throw FormatError("idx: unexpected end of file at byte " + std::to_string(off) +
                              " in " + images_path);
        off += d;
        for (std::size_t k = 0; k < d; ++k) ds.features.at(i, k) = buf[k] / 255.0;
    }

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw FormatError("idx: cannot open " + labels_path);
    std::size_t loff = 0;
    const std::uint32_t lmagic = detail::read_be_u32(lab, loff);
    if (lmagic != kIdxLabelMagic)
        throw FormatError("idx: bad label magic " + std::to_string(lmagic) + " at byte 0 in " +
                          labels_path);
    const std::uint32_t ln = detail::read_be_u32(lab, loff);
    if (ln != n)
        throw FormatError("idx: " + std::to_string(n) + " images vs " + std::to_string(ln) +
                          " labels");
    int max_label = 0;
    for (std::uint32_t i = 0; i < ln; ++i) {
        char b;
        lab.read(&b, 1);
        if (!lab)
            throw FormatError("idx: unexpected end of file at byte " + std::to_string(loff) +
                              " in " + labels_path);
        ++loff;
        const int y = static_cast<unsigned char>(b);
        max_label = std::max(max_label, y);
        ds.true_labels.push_back(y);
        ds.noisy_labels.push_back(y);
    }
    ds.num_classes = max_label + 1;
    return ds;
}

// Writes features (expected in [0,1], quantized to bytes) as n x d x 1 images.
inline void save_idx(const NoisyDataset& ds, const std::string& images_path,
                     const std::string& labels_path) {
    std::ofstream img(images_path, std::ios::binary);
    if (!img) throw FormatError("idx: cannot open " + images_path + " for writing");
    detail::write_be_u32(img, kIdxImageMagic);
    detail::write_be_u32(img, static_cast<std::uint32_t>(ds.size()));
    detail::write_be_u32(img, static_cast<std::uint32_t>(ds.dim()));
    detail::write_be_u32(img, 1);
    for (std::size_t i = 0; i < ds.size(); ++i)
        for (std::size_t k = 0; k < ds.dim(); ++k) {
            const double v = std::clamp(ds.features.at(i, k), 0.0, 1.0);
            const auto b = static_cast<unsigned char>(std::lround(v * 255.0));
            img.write(reinterpret_cast<const char*>(&b), 1);
        }

    std::ofstream lab(labels_path, std::ios::binary);
    if (!lab) throw FormatError("idx: cannot open " + labels_path + " for writing");
    detail::write_be_u32(lab, kIdxLabelMagic);
    detail::write_be_u32(lab, static_cast<std::uint32_t>(ds.size()));
    for (int y : ds.noisy_labels) {
        const auto b = static_cast<unsigned char>(y);
        lab.write(reinterpret_cast<const char*>(&b), 1);
    }
}

} // namespace tmlc
