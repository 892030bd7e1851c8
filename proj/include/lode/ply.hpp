#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lode/core.hpp"

namespace lode {

namespace detail {

inline bool is_little_endian() {
    uint16_t v = 1;
    uint8_t b;
    std::memcpy(&b, &v, 1);
    return b == 1;
}

enum class PlyType { F32, F64, I8, U8, I16, U16, I32, U32 };

inline PlyType ply_type_from(const std::string& s) {
    if (s == "float" || s == "float32") return PlyType::F32;
    if (s == "double" || s == "float64") return PlyType::F64;
    if (s == "char" || s == "int8") return PlyType::I8;
    if (s == "uchar" || s == "uint8") return PlyType::U8;
    if (s == "short" || s == "int16") return PlyType::I16;
    if (s == "ushort" || s == "uint16") return PlyType::U16;
    if (s == "int" || s == "int32") return PlyType::I32;
    if (s == "uint" || s == "uint32") return PlyType::U32;
    throw std::runtime_error("ply: unsupported property type " + s);
}

inline size_t ply_type_size(PlyType t) {
    switch (t) {
        case PlyType::F64: return 8;
        case PlyType::F32: case PlyType::I32: case PlyType::U32: return 4;
        case PlyType::I16: case PlyType::U16: return 2;
        default: return 1;
    }
}

inline double ply_read_binary(const char* p, PlyType t) {
    switch (t) {
        case PlyType::F32: { float v; std::memcpy(&v, p, 4); return v; }
        case PlyType::F64: { double v; std::memcpy(&v, p, 8); return v; }
        case PlyType::I8:  { int8_t v; std::memcpy(&v, p, 1); return v; }
        case PlyType::U8:  { uint8_t v; std::memcpy(&v, p, 1); return v; }
        case PlyType::I16: { int16_t v; std::memcpy(&v, p, 2); return v; }
        case PlyType::U16: { uint16_t v; std::memcpy(&v, p, 2); return v; }
        case PlyType::I32: { int32_t v; std::memcpy(&v, p, 4); return v; }
        case PlyType::U32: { uint32_t v; std::memcpy(&v, p, 4); return v; }
    }
    return 0.0;
}

} // namespace detail

// Reads ascii or binary_little_endian PLY vertex clouds. Recognized vertex
// properties: x y z, optional nx ny nz, optional label; anything else is
// skipped. Normals are renormalized only by the caller's validate().
inline PointCloud read_ply(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("ply: cannot open " + path);

    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("ply: empty file " + path);
    if (line.back() == '\r') line.pop_back();
    if (line != "ply") throw std::runtime_error("ply: missing magic in " + path);

    bool binary = false;
    size_t vertex_count = 0;
    struct Prop { std::string name; detail::PlyType type; };
    std::vector<Prop> props;
    bool in_vertex_element = false;

    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt == "binary_little_endian") binary = true;
            else if (fmt == "ascii") binary = false;
            else throw std::runtime_error("ply: unsupported format " + fmt);
        } else if (tok == "element") {
            std::string name;
            size_t count;
            ls >> name >> count;
            in_vertex_element = (name == "vertex");
            if (in_vertex_element) vertex_count = count;
            else if (count > 0) throw std::runtime_error("ply: unsupported non-vertex element " + name);
        } else if (tok == "property" && in_vertex_element) {
            std::string type, name;
            ls >> type >> name;
            if (type == "list") throw std::runtime_error("ply: list property unsupported on vertex");
            props.push_back({name, detail::ply_type_from(type)});
        } else if (tok == "end_header") {
            break;
        }
        // comments and obj_info ignored
    }

    int ix = -1, iy = -1, iz = -1, inx = -1, iny = -1, inz = -1, ilabel = -1;
    for (size_t i = 0; i < props.size(); ++i) {
        const std::string& n = props[i].name;
        if (n == "x") ix = int(i);
        else if (n == "y") iy = int(i);
        else if (n == "z") iz = int(i);
        else if (n == "nx") inx = int(i);
        else if (n == "ny") iny = int(i);
        else if (n == "nz") inz = int(i);
        else if (n == "label") ilabel = int(i);
    }
    if (ix < 0 || iy < 0 || iz < 0) throw std::runtime_error("ply: missing x/y/z properties");
    bool with_normals = inx >= 0 && iny >= 0 && inz >= 0;

    PointCloud cloud;
    cloud.points.reserve(vertex_count);
    if (with_normals) cloud.normals.reserve(vertex_count);
    if (ilabel >= 0) cloud.labels.reserve(vertex_count);

    std::vector<double> row(props.size());
    if (binary) {
        size_t row_bytes = 0;
        for (const auto& p : props) row_bytes += detail::ply_type_size(p.type);
        std::vector<char> buf(row_bytes);
        for (size_t v = 0; v < vertex_count; ++v) {
            in.read(buf.data(), std::streamsize(row_bytes));
            if (!in) throw std::runtime_error("ply: truncated vertex data in " + path);
            size_t off = 0;
            for (size_t i = 0; i < props.size(); ++i) {
                row[i] = detail::ply_read_binary(buf.data() + off, props[i].type);
                off += detail::ply_type_size(props[i].type);
            }
            cloud.points.push_back({row[ix], row[iy], row[iz]});
            if (with_normals) cloud.normals.push_back({row[inx], row[iny], row[inz]});
            if (ilabel >= 0) cloud.labels.push_back(int(row[ilabel]));
        }
    } else {
        for (size_t v = 0; v < vertex_count; ++v) {
            if (!std::getline(in, line)) throw std::runtime_error("ply: truncated vertex data in " + path);
            std::istringstream ls(line);
            for (size_t i = 0; i < props.size(); ++i)
                if (!(ls >> row[i])) throw std::runtime_error("ply: short vertex row in " + path);
            cloud.points.push_back({row[ix], row[iy], row[iz]});
            if (with_normals) cloud.normals.push_back({row[inx], row[iny], row[inz]});
            if (ilabel >= 0) cloud.labels.push_back(int(row[ilabel]));
        }
    }
    return cloud;
}

// Binary little-endian by default; ascii mode kept for eyeballing fixtures.
inline void write_ply(const std::string& path, const PointCloud& cloud, bool binary = true) {
    if (binary && !detail::is_little_endian())
        throw std::runtime_error("ply: binary writer requires a little-endian host");
    cloud.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("ply: cannot write " + path);

    out << "ply\n";
    out << (binary ? "format binary_little_endian 1.0\n" : "format ascii 1.0\n");
    out << "element vertex " << cloud.points.size() << "\n";
    out << "property float x\nproperty float y\nproperty float z\n";
    if (cloud.has_normals()) out << "property float nx\nproperty float ny\nproperty float nz\n";
    if (cloud.has_labels()) out << "property ushort label\n";
    out << "end_header\n";

    for (size_t i = 0; i < cloud.points.size(); ++i) {
        if (binary) {
            float v[7];
            int n = 0;
            v[n++] = float(cloud.points[i].x);
            v[n++] = float(cloud.points[i].y);
            v[n++] = float(cloud.points[i].z);
            if (cloud.has_normals()) {
                v[n++] = float(cloud.normals[i].x);
                v[n++] = float(cloud.normals[i].y);
                v[n++] = float(cloud.normals[i].z);
            }
            out.write(reinterpret_cast<const char*>(v), n * 4);
            if (cloud.has_labels()) {
                uint16_t l = uint16_t(cloud.labels[i]);
                out.write(reinterpret_cast<const char*>(&l), 2);
            }
        } else {
            char buf[160];
            std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g", double(float(cloud.points[i].x)),
                          double(float(cloud.points[i].y)), double(float(cloud.points[i].z)));
            out << buf;
            if (cloud.has_normals()) {
                std::snprintf(buf, sizeof buf, " %.9g %.9g %.9g",
                              double(float(cloud.normals[i].x)), double(float(cloud.normals[i].y)),
                              double(float(cloud.normals[i].z)));
                out << buf;
            }
            if (cloud.has_labels()) out << ' ' << cloud.labels[i];
            out << '\n';
        }
    }
    if (!out) throw std::runtime_error("ply: write failed for " + path);
}

} // namespace lode
