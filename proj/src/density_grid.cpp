#include "fewcount/density_grid.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "fewcount/errors.hpp"

namespace fewcount {

namespace {

// The format is defined as little-endian; byte-swap on big-endian hosts.
bool host_little_endian() {
    uint32_t v = 1;
    uint8_t b;
    std::memcpy(&b, &v, 1);
    return b == 1;
}

void swap_floats(std::vector<char>& bytes) {
    for (size_t i = 0; i + 3 < bytes.size(); i += 4) {
        std::swap(bytes[i], bytes[i + 3]);
        std::swap(bytes[i + 1], bytes[i + 2]);
    }
}

} // namespace

void write_density_grid(const std::string& path, const Tensor<float>& map) {
    if (map.rank() != 2) throw ShapeError("density grid must be (H,W)");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write density grid: " + path);
    out << "FCDENS 1 " << map.dim(0) << " " << map.dim(1) << "\n";
    std::vector<char> bytes(static_cast<size_t>(map.size()) * 4);
    std::memcpy(bytes.data(), map.data(), bytes.size());
    if (!host_little_endian()) swap_floats(bytes);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write on density grid: " + path);
}

Tensor<float> read_density_grid(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open density grid: " + path);
    std::string header;
    std::getline(in, header);
    std::istringstream hs(header);
    std::string magic;
    int version = 0, h = 0, w = 0;
    hs >> magic >> version >> h >> w;
    if (magic != "FCDENS") throw ValidationError("not a density grid file: " + path);
    if (version != 1) throw ValidationError("unsupported density grid version in " + path);
    if (h <= 0 || w <= 0) throw ValidationError("bad density grid dimensions in " + path);
    std::vector<char> bytes(static_cast<size_t>(h) * w * 4);
    in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
        throw ValidationError("truncated density grid: " + path);
    if (!host_little_endian()) swap_floats(bytes);
    Tensor<float> map(Shape{h, w});
    std::memcpy(map.data(), bytes.data(), bytes.size());
    return map;
}

} // namespace fewcount
