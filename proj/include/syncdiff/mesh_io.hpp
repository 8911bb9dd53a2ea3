#pragma once

#include <cctype>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "syncdiff/mesh.hpp"

namespace syncdiff {

enum class MeshFormat { off, ply };

namespace detail {

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open '" + path.string() + "'", 0);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Line-aware whitespace tokenizer for the text formats; '#' starts a comment.
class TextTokens {
public:
    explicit TextTokens(std::string_view text) : text_(text) {}

    /// Returns the next token or an empty view at end of input.
    std::string_view next() {
        skip();
        const std::size_t start = pos_;
        while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])) &&
               text_[pos_] != '#')
            ++pos_;
        token_line_ = line_;
        return text_.substr(start, pos_ - start);
    }

    /// Tokens remaining on the current line (used to skip per-vertex extras).
    void skip_rest_of_line() {
        while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
    }

    std::size_t line() const noexcept { return token_line_; }
    std::size_t pos() const noexcept { return pos_; }
    void seek(std::size_t pos) { pos_ = pos; }

private:
    void skip() {
        while (pos_ < text_.size()) {
            const char c = text_[pos_];
            if (c == '\n') {
                ++line_;
                ++pos_;
            } else if (c == '#') {
                while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    std::string_view text_;
    std::size_t pos_ = 0;
    std::size_t line_ = 1;
    std::size_t token_line_ = 1;
};

template <typename T>
T parse_number(std::string_view tok, std::size_t line, const char* what) {
    T value{};
    if (tok.empty()) throw ParseError(std::string("unexpected end of file reading ") + what, line);
    const char* first = tok.data();
    if (*first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, tok.data() + tok.size(), value);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) {
        throw ParseError("line " + std::to_string(line) + ": cannot parse " + what + " from '" +
                             std::string(tok) + "'",
                         line);
    }
    return value;
}

inline TriangleMesh parse_off(std::string_view text) {
    TextTokens tok(text);
    std::string_view head = tok.next();
    if (head.size() < 3 || head.substr(head.size() - 3) != "OFF") {
        throw ParseError("line " + std::to_string(tok.line()) + ": missing OFF header", tok.line());
    }
    const auto n = parse_number<long long>(tok.next(), tok.line(), "vertex count");
    const auto m = parse_number<long long>(tok.next(), tok.line(), "face count");
    parse_number<long long>(tok.next(), tok.line(), "edge count");
    if (n < 0 || m < 0) throw ParseError("negative element count", tok.line());

    Vertices V(n, 3);
    for (long long i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) V(i, c) = parse_number<double>(tok.next(), tok.line(), "vertex coordinate");
        tok.skip_rest_of_line();
    }
    Faces F(m, 3);
    for (long long f = 0; f < m; ++f) {
        const auto arity = parse_number<int>(tok.next(), tok.line(), "face arity");
        const std::size_t line = tok.line();
        if (arity != 3) {
            throw ParseError("line " + std::to_string(line) + ": face " + std::to_string(f) +
                                 " has " + std::to_string(arity) + " vertices, only triangles are supported",
                             line);
        }
        for (int c = 0; c < 3; ++c) {
            const auto v = parse_number<long long>(tok.next(), tok.line(), "face index");
            if (v < 0 || v >= n) {
                throw ParseError("line " + std::to_string(line) + ": face " + std::to_string(f) +
                                     " references vertex " + std::to_string(v) + " of a " +
                                     std::to_string(n) + "-vertex mesh",
                                 line);
            }
            F(f, c) = static_cast<int>(v);
        }
        tok.skip_rest_of_line();
    }
    return TriangleMesh(std::move(V), std::move(F));
}

enum class PlyType { i8, u8, i16, u16, i32, u32, f32, f64 };

inline PlyType ply_type(std::string_view name, std::size_t line) {
    if (name == "char" || name == "int8") return PlyType::i8;
    if (name == "uchar" || name == "uint8") return PlyType::u8;
    if (name == "short" || name == "int16") return PlyType::i16;
    if (name == "ushort" || name == "uint16") return PlyType::u16;
    if (name == "int" || name == "int32") return PlyType::i32;
    if (name == "uint" || name == "uint32") return PlyType::u32;
    if (name == "float" || name == "float32") return PlyType::f32;
    if (name == "double" || name == "float64") return PlyType::f64;
    throw ParseError("line " + std::to_string(line) + ": unknown PLY type '" + std::string(name) + "'", line);
}

inline std::size_t ply_size(PlyType t) {
    switch (t) {
    case PlyType::i8:
    case PlyType::u8: return 1;
    case PlyType::i16:
    case PlyType::u16: return 2;
    case PlyType::i32:
    case PlyType::u32:
    case PlyType::f32: return 4;
    case PlyType::f64: return 8;
    }
    return 0;
}

struct PlyProperty {
    std::string name;
    PlyType type = PlyType::f32;
    bool is_list = false;
    PlyType count_type = PlyType::u8;
};

struct PlyElement {
    std::string name;
    long long count = 0;
    std::vector<PlyProperty> properties;
};

/// Little-endian binary cursor with byte offsets for error reporting.
class BinaryCursor {
public:
    BinaryCursor(std::string_view data, std::size_t offset) : data_(data), pos_(offset) {}

    double read(PlyType t) {
        const std::size_t size = ply_size(t);
        if (pos_ + size > data_.size()) {
            throw ParseError("byte " + std::to_string(pos_) + ": unexpected end of binary PLY data", 0, pos_);
        }
        unsigned char buf[8];
        std::memcpy(buf, data_.data() + pos_, size);
        pos_ += size;
        // Host order is assumed little-endian, matching every supported target.
        switch (t) {
        case PlyType::i8: { std::int8_t v; std::memcpy(&v, buf, 1); return v; }
        case PlyType::u8: { std::uint8_t v; std::memcpy(&v, buf, 1); return v; }
        case PlyType::i16: { std::int16_t v; std::memcpy(&v, buf, 2); return v; }
        case PlyType::u16: { std::uint16_t v; std::memcpy(&v, buf, 2); return v; }
        case PlyType::i32: { std::int32_t v; std::memcpy(&v, buf, 4); return v; }
        case PlyType::u32: { std::uint32_t v; std::memcpy(&v, buf, 4); return v; }
        case PlyType::f32: { float v; std::memcpy(&v, buf, 4); return v; }
        case PlyType::f64: { double v; std::memcpy(&v, buf, 8); return v; }
        }
        return 0.0;
    }

    std::size_t pos() const noexcept { return pos_; }

private:
    std::string_view data_;
    std::size_t pos_;
};

inline TriangleMesh parse_ply(std::string_view text) {
    // Header is line-oriented ASCII terminated by "end_header\n".
    const std::size_t end = text.find("end_header");
    if (text.substr(0, 3) != "ply" || end == std::string_view::npos) {
        throw ParseError("line 1: missing PLY header", 1);
    }
    std::size_t body = text.find('\n', end);
    body = body == std::string_view::npos ? text.size() : body + 1;

    std::vector<PlyElement> elements;
    bool binary = false;
    std::istringstream header{std::string(text.substr(0, end))};
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(header, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt == "ascii") binary = false;
            else if (fmt == "binary_little_endian") binary = true;
            else throw ParseError("line " + std::to_string(line_no) + ": unsupported PLY format '" + fmt + "'", line_no);
        } else if (word == "element") {
            PlyElement e;
            ls >> e.name >> e.count;
            if (!ls || e.count < 0) throw ParseError("line " + std::to_string(line_no) + ": bad element line", line_no);
            elements.push_back(std::move(e));
        } else if (word == "property") {
            if (elements.empty()) throw ParseError("line " + std::to_string(line_no) + ": property before element", line_no);
            PlyProperty p;
            std::string type;
            ls >> type;
            if (type == "list") {
                std::string count_type, item_type;
                ls >> count_type >> item_type >> p.name;
                p.is_list = true;
                p.count_type = ply_type(count_type, line_no);
                p.type = ply_type(item_type, line_no);
            } else {
                p.type = ply_type(type, line_no);
                ls >> p.name;
            }
            elements.back().properties.push_back(std::move(p));
        }
    }

    Vertices V;
    Faces F;
    TextTokens tok(text);
    tok.seek(body);
    BinaryCursor cur(text, body);
    std::size_t ascii_line = line_no + 1;

    for (const auto& e : elements) {
        const bool is_vertex = e.name == "vertex";
        const bool is_face = e.name == "face";
        if (is_vertex) V.resize(e.count, 3);
        if (is_face) F.resize(e.count, 3);
        for (long long i = 0; i < e.count; ++i) {
            for (const auto& p : e.properties) {
                auto read = [&](PlyType t) -> double {
                    if (binary) return cur.read(t);
                    const auto tk = tok.next();
                    ascii_line = tok.line();
                    return parse_number<double>(tk, tok.line(), "PLY value");
                };
                if (p.is_list) {
                    const std::size_t where = binary ? cur.pos() : ascii_line;
                    const auto count = static_cast<long long>(read(p.count_type));
                    const bool indices = is_face && (p.name == "vertex_indices" || p.name == "vertex_index");
                    if (indices && count != 3) {
                        const std::string msg = "face " + std::to_string(i) + " has " +
                                                std::to_string(count) + " vertices, only triangles are supported";
                        if (binary) throw ParseError("byte " + std::to_string(where) + ": " + msg, 0, where);
                        throw ParseError("line " + std::to_string(tok.line()) + ": " + msg, tok.line());
                    }
                    for (long long c = 0; c < count; ++c) {
                        const double v = read(p.type);
                        if (indices) {
                            if (v < 0 || v >= static_cast<double>(V.rows())) {
                                const std::string msg = "face " + std::to_string(i) + " references vertex " +
                                                        std::to_string(static_cast<long long>(v)) + " of a " +
                                                        std::to_string(V.rows()) + "-vertex mesh";
                                if (binary) throw ParseError("byte " + std::to_string(cur.pos()) + ": " + msg, 0, cur.pos());
                                throw ParseError("line " + std::to_string(tok.line()) + ": " + msg, tok.line());
                            }
                            F(i, c) = static_cast<int>(v);
                        }
                    }
                } else {
                    const double v = read(p.type);
                    if (is_vertex) {
                        if (p.name == "x") V(i, 0) = v;
                        else if (p.name == "y") V(i, 1) = v;
                        else if (p.name == "z") V(i, 2) = v;
                    }
                }
            }
        }
    }
    return TriangleMesh(std::move(V), std::move(F));
}

} // namespace detail

/// Loads an ASCII OFF or an ASCII / binary little-endian PLY triangle mesh.
inline TriangleMesh load_mesh(const std::filesystem::path& path, MeshFormat format) {
    const std::string text = detail::read_file(path);
    return format == MeshFormat::off ? detail::parse_off(text) : detail::parse_ply(text);
}

/// Format from the file extension (.off / .ply, case-insensitive).
inline TriangleMesh load_mesh(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (ext == ".off") return load_mesh(path, MeshFormat::off);
    if (ext == ".ply") return load_mesh(path, MeshFormat::ply);
    throw ParseError("unrecognised mesh extension '" + ext + "'", 0);
}

/// ASCII OFF with 17 significant digits so that load(write(mesh)) is exact.
inline std::string to_off_string(const TriangleMesh& mesh) {
    std::string out = "OFF\n" + std::to_string(mesh.num_vertices()) + " " +
                      std::to_string(mesh.num_faces()) + " 0\n";
    char buf[128];
    for (Index i = 0; i < mesh.num_vertices(); ++i) {
        const auto& v = mesh.vertices();
        std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", v(i, 0), v(i, 1), v(i, 2));
        out += buf;
    }
    for (Index f = 0; f < mesh.num_faces(); ++f) {
        const auto& F = mesh.faces();
        std::snprintf(buf, sizeof buf, "3 %d %d %d\n", F(f, 0), F(f, 1), F(f, 2));
        out += buf;
    }
    return out;
}

inline void write_off(const TriangleMesh& mesh, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << to_off_string(mesh);
}

} // namespace syncdiff
