#include "hat/snapshot.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "hat/errors.hpp"

HAT_NS_BEGIN

namespace {

static_assert(std::endian::native == std::endian::little, "snapshot I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError("snapshot: truncated stream");
    return v;
}

}  // namespace

void write_snapshot(std::ostream& os, const Tensor& t) {
    os.write("HATT", 4);
    put<std::uint8_t>(os, kSnapshotVersion);
    put<std::uint8_t>(os, sizeof(Scalar) == 8 ? 1 : 0);
    put<std::uint64_t>(os, t.rank());
    for (auto d : t.shape()) put<std::uint64_t>(os, static_cast<std::uint64_t>(d));
    os.write(reinterpret_cast<const char*>(t.values().data()),
             static_cast<std::streamsize>(t.size() * sizeof(Scalar)));
    if (!os) throw IoError("snapshot: write failed");
}

Tensor read_snapshot(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "HATT", 4) != 0) throw IoError("snapshot: bad magic");
    const auto version = get<std::uint8_t>(is);
    if (version != kSnapshotVersion) throw IoError("snapshot: unsupported version " + std::to_string(version));
    const auto dtype = get<std::uint8_t>(is);
    if (dtype > 1) throw IoError("snapshot: unknown dtype " + std::to_string(dtype));
    const auto rank = get<std::uint64_t>(is);
    if (rank > 16) throw IoError("snapshot: implausible rank " + std::to_string(rank));
    Shape shape;
    for (std::uint64_t i = 0; i < rank; ++i) shape.push_back(static_cast<std::int64_t>(get<std::uint64_t>(is)));
    const auto n = static_cast<std::size_t>(numel(shape));
    std::vector<Scalar> data(n);
    if (dtype == 0) {
        for (auto& v : data) v = static_cast<Scalar>(get<float>(is));
    } else {
        for (auto& v : data) v = static_cast<Scalar>(get<double>(is));
    }
    return Tensor(std::move(shape), std::move(data));
}

void save_snapshot(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    write_snapshot(os, t);
}

Tensor load_snapshot(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    return read_snapshot(is);
}

HAT_NS_END
