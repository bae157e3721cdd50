#include "fakepcd/pcd_io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cctype>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

namespace fakepcd {

namespace {

constexpr char kMagic[4] = {'P', 'C', 'D', 'A'};

std::uint32_t decode_u32le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void encode_u32le(std::uint32_t v, unsigned char* p) {
    p[0] = static_cast<unsigned char>(v & 0xff);
    p[1] = static_cast<unsigned char>((v >> 8) & 0xff);
    p[2] = static_cast<unsigned char>((v >> 16) & 0xff);
    p[3] = static_cast<unsigned char>((v >> 24) & 0xff);
}

float decode_f32le(const unsigned char* p) {
    return std::bit_cast<float>(decode_u32le(p));
}

void encode_f32le(float v, unsigned char* p) {
    encode_u32le(std::bit_cast<std::uint32_t>(v), p);
}

PointCloud read_xyz(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open file: " + path.string());
    PointCloud cloud;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        Point3 p;
        const char* cursor = line.c_str();
        char* end = nullptr;
        bool ok = true;
        for (double* coord : {&p.x, &p.y, &p.z}) {
            *coord = std::strtod(cursor, &end); // accepts nan/inf, caught below
            if (end == cursor) {
                ok = false;
                break;
            }
            cursor = end;
        }
        while (ok && *cursor != '\0') {
            if (!std::isspace(static_cast<unsigned char>(*cursor++))) ok = false;
        }
        if (!ok) {
            throw ParseError("xyz parse error at " + path.string() + " line " +
                             std::to_string(line_no) + ": expected three floats");
        }
        if (!p.finite()) {
            throw ValidationError("non-finite coordinate at " + path.string() + " line " +
                                  std::to_string(line_no));
        }
        cloud.points.push_back(p);
    }
    if (cloud.points.empty()) throw ParseError("no points in " + path.string());
    return cloud;
}

PointCloud read_pcda(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path.string());
    std::array<unsigned char, 8> header{};
    in.read(reinterpret_cast<char*>(header.data()), header.size());
    if (in.gcount() < 4 || std::memcmp(header.data(), kMagic, 4) != 0)
        throw ParseError("bad magic at byte offset 0 in " + path.string());
    if (in.gcount() < static_cast<std::streamsize>(header.size()))
        throw ParseError("truncated header at byte offset 4 in " + path.string());
    const std::uint32_t count = decode_u32le(header.data() + 4);
    if (count == 0) throw ParseError("no points in " + path.string());

    PointCloud cloud;
    cloud.points.reserve(count);
    std::vector<unsigned char> buf(static_cast<std::size_t>(count) * 12);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
        throw ParseError("point count mismatch in " + path.string() + ": declared " +
                         std::to_string(count) + " points but file ends at byte offset " +
                         std::to_string(8 + in.gcount()));
    }
    char probe;
    if (in.read(&probe, 1)) {
        throw ParseError("trailing bytes after declared points at byte offset " +
                         std::to_string(8 + buf.size()) + " in " + path.string());
    }
    for (std::uint32_t i = 0; i < count; ++i) {
        const unsigned char* rec = buf.data() + static_cast<std::size_t>(i) * 12;
        Point3 p{decode_f32le(rec), decode_f32le(rec + 4), decode_f32le(rec + 8)};
        if (!p.finite())
            throw ValidationError("non-finite coordinate in point " + std::to_string(i) + " of " +
                                  path.string());
        cloud.points.push_back(p);
    }
    return cloud;
}

void write_xyz(const PointCloud& cloud, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open file for writing: " + path.string());
    char line[96];
    for (const auto& p : cloud.points) {
        std::snprintf(line, sizeof(line), "%.6f %.6f %.6f\n", p.x, p.y, p.z);
        out << line;
    }
    if (!out) throw IoError("write failure: " + path.string());
}

void write_pcda(const PointCloud& cloud, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open file for writing: " + path.string());
    std::array<unsigned char, 8> header{};
    std::memcpy(header.data(), kMagic, 4);
    encode_u32le(static_cast<std::uint32_t>(cloud.points.size()), header.data() + 4);
    out.write(reinterpret_cast<const char*>(header.data()), header.size());
    std::array<unsigned char, 12> rec{};
    for (const auto& p : cloud.points) {
        encode_f32le(static_cast<float>(p.x), rec.data());
        encode_f32le(static_cast<float>(p.y), rec.data() + 4);
        encode_f32le(static_cast<float>(p.z), rec.data() + 8);
        out.write(reinterpret_cast<const char*>(rec.data()), rec.size());
    }
    if (!out) throw IoError("write failure: " + path.string());
}

} // namespace

PointCloud read_point_cloud(const std::filesystem::path& path, CloudFormat format) {
    if (format == CloudFormat::auto_detect) {
        std::ifstream probe(path, std::ios::binary);
        if (!probe) throw IoError("cannot open file: " + path.string());
        char magic[4] = {};
        probe.read(magic, 4);
        format = (probe.gcount() == 4 && std::memcmp(magic, kMagic, 4) == 0) ? CloudFormat::pcda
                                                                             : CloudFormat::xyz;
    }
    PointCloud cloud = format == CloudFormat::pcda ? read_pcda(path) : read_xyz(path);
    cloud.validate();
    return cloud;
}

void write_point_cloud(const PointCloud& cloud, const std::filesystem::path& path,
                       CloudFormat format) {
    cloud.validate();
    if (format == CloudFormat::auto_detect) {
        format = path.extension() == ".pcda" ? CloudFormat::pcda : CloudFormat::xyz;
    }
    if (format == CloudFormat::pcda) {
        write_pcda(cloud, path);
    } else {
        write_xyz(cloud, path);
    }
}

} // namespace fakepcd
