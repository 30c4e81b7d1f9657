#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "hat/dataio.hpp"
#include "hat/errors.hpp"

namespace hat {

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& is) {
    std::string tok;
    int c;
    while ((c = is.get()) != EOF) {
        if (c == '#') {
            while ((c = is.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    return tok;
}

PnmHeader parse_header(std::istream& is, const std::filesystem::path& path) {
    const std::string magic = next_token(is);
    if (magic != "P5" && magic != "P6") throw IoError(path.string() + ": unsupported PNM type '" + magic + "'");
    PnmHeader h;
    h.kind = magic[1];
    try {
        h.width = std::stoi(next_token(is));
        h.height = std::stoi(next_token(is));
        h.maxval = std::stoi(next_token(is));
    } catch (const std::exception&) {
        throw IoError(path.string() + ": malformed PNM header");
    }
    if (h.width <= 0 || h.height <= 0 || h.maxval <= 0 || h.maxval > 65535) {
        throw IoError(path.string() + ": invalid PNM header values");
    }
    return h;
}

std::vector<std::uint32_t> read_samples(std::istream& is, std::size_t count, int maxval,
                                        const std::filesystem::path& path) {
    const std::size_t bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> raw(count * bytes);
    if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
        throw IoError(path.string() + ": truncated raster payload");
    }
    std::vector<std::uint32_t> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        out[i] = bytes == 2 ? (std::uint32_t(raw[2 * i]) << 8) | raw[2 * i + 1] : raw[i];
    }
    return out;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    return os;
}

template <typename T>
void write_heatmap_impl(std::span<const T> map, int height, int width, const std::filesystem::path& path,
                        HeatmapFormat format) {
    if (map.size() != static_cast<std::size_t>(height) * width) throw DimensionError("write_heatmap: size mismatch");
    for (T v : map) {
        if (!std::isfinite(static_cast<double>(v))) throw ArgumentError("write_heatmap: non-finite value");
    }
    auto os = open_out(path);
    if (format == HeatmapFormat::pgm16) {
        os << "P5\n" << width << ' ' << height << "\n65535\n";
        const auto [lo_it, hi_it] = std::minmax_element(map.begin(), map.end());
        const double lo = static_cast<double>(*lo_it), hi = static_cast<double>(*hi_it);
        const double range = hi - lo;
        for (T v : map) {
            std::uint16_t q = 0;
            if (range > 0) q = static_cast<std::uint16_t>(std::lround(65535.0 * (static_cast<double>(v) - lo) / range));
            const char bytes[2] = {static_cast<char>(q >> 8), static_cast<char>(q & 0xff)};
            os.write(bytes, 2);
        }
    } else {
        static_assert(std::endian::native == std::endian::little);
        os << "Pf\n" << width << ' ' << height << "\n-1.0\n";
        for (int y = height - 1; y >= 0; --y) {
            for (int x = 0; x < width; ++x) {
                const float f = static_cast<float>(map[static_cast<std::size_t>(y) * width + x]);
                os.write(reinterpret_cast<const char*>(&f), sizeof(float));
            }
        }
    }
    if (!os) throw IoError("failed writing " + path.string());
}

}  // namespace

PnmHeader read_pnm_header(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open raster " + path.string());
    return parse_header(is, path);
}

ImageRaster read_image(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open raster " + path.string());
    const auto h = parse_header(is, path);
    ImageRaster img;
    img.height = h.height;
    img.width = h.width;
    img.channels = h.kind == '6' ? 3 : 1;
    const std::size_t plane = static_cast<std::size_t>(h.width) * h.height;
    const auto samples = read_samples(is, plane * img.channels, h.maxval, path);
    img.values.resize(samples.size());
    for (std::size_t p = 0; p < plane; ++p) {
        for (int c = 0; c < img.channels; ++c) {
            img.values[c * plane + p] = static_cast<float>(samples[p * img.channels + c]) / h.maxval;
        }
    }
    return img;
}

void write_image(const std::filesystem::path& path, const ImageRaster& image) {
    if (image.channels != 1 && image.channels != 3) throw ArgumentError("write_image: channels must be 1 or 3");
    auto os = open_out(path);
    os << (image.channels == 3 ? "P6\n" : "P5\n") << image.width << ' ' << image.height << "\n255\n";
    const std::size_t plane = static_cast<std::size_t>(image.width) * image.height;
    std::vector<unsigned char> raw(plane * image.channels);
    for (std::size_t p = 0; p < plane; ++p) {
        for (int c = 0; c < image.channels; ++c) {
            const float v = std::clamp(image.values[c * plane + p], 0.0f, 1.0f);
            raw[p * image.channels + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
        }
    }
    os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!os) throw IoError("failed writing " + path.string());
}

SemanticLabelMap read_label_map(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open label map " + path.string());
    const auto h = parse_header(is, path);
    if (h.kind != '5') throw IoError(path.string() + ": label maps must be single-channel PGM");
    SemanticLabelMap m;
    m.height = h.height;
    m.width = h.width;
    const auto samples = read_samples(is, static_cast<std::size_t>(h.width) * h.height, h.maxval, path);
    m.labels.assign(samples.begin(), samples.end());
    return m;
}

void write_label_map(const std::filesystem::path& path, const SemanticLabelMap& labels) {
    int maxid = 0;
    for (int id : labels.labels) {
        if (id < 0 || id > 65535) throw ArgumentError("write_label_map: label id out of range");
        maxid = std::max(maxid, id);
    }
    const int maxval = maxid > 255 ? 65535 : 255;
    auto os = open_out(path);
    os << "P5\n" << labels.width << ' ' << labels.height << '\n' << maxval << '\n';
    for (int id : labels.labels) {
        if (maxval > 255) {
            const char b[2] = {static_cast<char>(id >> 8), static_cast<char>(id & 0xff)};
            os.write(b, 2);
        } else {
            os.put(static_cast<char>(id));
        }
    }
    if (!os) throw IoError("failed writing " + path.string());
}

void write_heatmap(std::span<const double> map, int height, int width, const std::filesystem::path& path,
                   HeatmapFormat format) {
    write_heatmap_impl(map, height, width, path, format);
}

void write_heatmap(std::span<const float> map, int height, int width, const std::filesystem::path& path,
                   HeatmapFormat format) {
    write_heatmap_impl(map, height, width, path, format);
}

std::vector<float> read_pfm(const std::filesystem::path& path, int& height, int& width) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    if (next_token(is) != "Pf") throw IoError(path.string() + ": not a grayscale PFM");
    width = std::stoi(next_token(is));
    height = std::stoi(next_token(is));
    const double scale = std::stod(next_token(is));
    if (scale >= 0) throw IoError(path.string() + ": big-endian PFM not supported");
    std::vector<float> out(static_cast<std::size_t>(width) * height);
    for (int y = height - 1; y >= 0; --y) {
        if (!is.read(reinterpret_cast<char*>(out.data() + static_cast<std::size_t>(y) * width),
                     static_cast<std::streamsize>(width * sizeof(float)))) {
            throw IoError(path.string() + ": truncated PFM payload");
        }
    }
    return out;
}

std::vector<std::uint16_t> read_pgm16(const std::filesystem::path& path, int& height, int& width) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    const auto h = parse_header(is, path);
    if (h.kind != '5' || h.maxval != 65535) throw IoError(path.string() + ": not a 16-bit PGM");
    height = h.height;
    width = h.width;
    const auto samples = read_samples(is, static_cast<std::size_t>(h.width) * h.height, h.maxval, path);
    return {samples.begin(), samples.end()};
}

ImageRaster resize_bilinear(const ImageRaster& image, int height, int width) {
    if (height < 1 || width < 1) throw ArgumentError("resize_bilinear: target size must be positive");
    ImageRaster out;
    out.height = height;
    out.width = width;
    out.channels = image.channels;
    out.values.resize(static_cast<std::size_t>(height) * width * image.channels);
    auto axis = [](int o, int out_size, int in_size) {
        double src = (o + 0.5) * in_size / out_size - 0.5;
        src = std::clamp(src, 0.0, double(in_size - 1));
        const int lo = static_cast<int>(std::floor(src));
        const int hi = std::min(lo + 1, in_size - 1);
        return std::tuple{lo, hi, src - lo};
    };
    for (int c = 0; c < image.channels; ++c) {
        for (int y = 0; y < height; ++y) {
            const auto [y0, y1, wy] = axis(y, height, image.height);
            for (int x = 0; x < width; ++x) {
                const auto [x0, x1, wx] = axis(x, width, image.width);
                const double top = image.at(c, y0, x0) * (1 - wx) + image.at(c, y0, x1) * wx;
                const double bot = image.at(c, y1, x0) * (1 - wx) + image.at(c, y1, x1) * wx;
                out.values[(static_cast<std::size_t>(c) * height + y) * width + x] =
                    static_cast<float>(top * (1 - wy) + bot * wy);
            }
        }
    }
    return out;
}

SemanticLabelMap resize_nearest(const SemanticLabelMap& labels, int height, int width) {
    if (labels.height == height && labels.width == width) return labels;
    SemanticLabelMap out;
    out.height = height;
    out.width = width;
    out.labels.resize(static_cast<std::size_t>(height) * width);
    for (int y = 0; y < height; ++y) {
        const int sy = std::min(labels.height - 1, static_cast<int>((y + 0.5) * labels.height / height));
        for (int x = 0; x < width; ++x) {
            const int sx = std::min(labels.width - 1, static_cast<int>((x + 0.5) * labels.width / width));
            out.labels[static_cast<std::size_t>(y) * width + x] = labels.at(sy, sx);
        }
    }
    return out;
}

}  // namespace hat
