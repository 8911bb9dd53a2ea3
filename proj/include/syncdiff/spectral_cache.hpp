#pragma once

// On-disk cache of spectral bases. Each entry is a pair of files:
//   <key>.k<k>.bin   little-endian: int64 n, int64 k, k eigenvalues,
//                    n*k eigenvector entries (column-major), n mass entries
//   <key>.k<k>.json  sidecar: mesh hash, n, k, residuals, checksum of the blob
// Both are written to a temporary name and renamed into place.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "syncdiff/shape.hpp"

namespace syncdiff {

enum class CacheStatus { hit, miss, stale, corrupt, disabled };

inline const char* to_string(CacheStatus s) {
    switch (s) {
    case CacheStatus::hit: return "hit";
    case CacheStatus::miss: return "miss";
    case CacheStatus::stale: return "stale";
    case CacheStatus::corrupt: return "corrupt";
    case CacheStatus::disabled: return "disabled";
    }
    return "unknown";
}

struct CacheOutcome {
    CacheStatus status = CacheStatus::disabled;
    std::string detail;               ///< why an entry was not used
    std::filesystem::path blob, sidecar;
    std::uint64_t mesh_hash = 0;
};

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}

inline std::uint64_t get_u64(const std::string& in, std::size_t& pos) {
    if (pos + 8 > in.size()) throw ParseError("spectral cache blob is truncated", 0, pos);
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + b])) << (8 * b);
    pos += 8;
    return v;
}

inline void put_f64(std::string& out, double x) {
    std::uint64_t v;
    std::memcpy(&v, &x, sizeof v);
    put_u64(out, v);
}

inline double get_f64(const std::string& in, std::size_t& pos) {
    const std::uint64_t v = get_u64(in, pos);
    double x;
    std::memcpy(&x, &v, sizeof x);
    return x;
}

inline std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string encode_basis(const SpectralBasis& b) {
    const Index n = b.size(), k = b.order();
    std::string out;
    out.reserve(static_cast<std::size_t>(16 + 8 * (k + n * k + n)));
    put_u64(out, static_cast<std::uint64_t>(n));
    put_u64(out, static_cast<std::uint64_t>(k));
    for (Index i = 0; i < k; ++i) put_f64(out, b.eigenvalues(i));
    for (Index c = 0; c < k; ++c)
        for (Index r = 0; r < n; ++r) put_f64(out, b.eigenvectors(r, c));
    for (Index i = 0; i < n; ++i) put_f64(out, b.mass(i));
    return out;
}

inline SpectralBasis decode_basis(const std::string& in) {
    std::size_t pos = 0;
    const auto n = static_cast<Index>(get_u64(in, pos));
    const auto k = static_cast<Index>(get_u64(in, pos));
    if (n <= 0 || k <= 0 || k > n || in.size() != static_cast<std::size_t>(16 + 8 * (k + n * k + n))) {
        throw ParseError("spectral cache blob has inconsistent size", 0, 0);
    }
    SpectralBasis b;
    b.eigenvalues.resize(k);
    b.eigenvectors.resize(n, k);
    b.mass.resize(n);
    for (Index i = 0; i < k; ++i) b.eigenvalues(i) = get_f64(in, pos);
    for (Index c = 0; c < k; ++c)
        for (Index r = 0; r < n; ++r) b.eigenvectors(r, c) = get_f64(in, pos);
    for (Index i = 0; i < n; ++i) b.mass(i) = get_f64(in, pos);
    return b;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ParseError("cannot open " + p.string(), 0);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Writes `bytes` next to `target` and renames it into place.
inline void atomic_write(const std::filesystem::path& target, const std::string& bytes) {
    std::filesystem::path tmp = target;
    // unique per writer, so concurrent writers of one entry never share a temporary
    tmp += ".tmp." + hex64(std::hash<std::thread::id>{}(std::this_thread::get_id()) ^
                           static_cast<std::uint64_t>(reinterpret_cast<std::uintptr_t>(&bytes)));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot write cache file " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw ConfigError("short write to cache file " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, target, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw ConfigError("cannot move cache file into place: " + target.string());
    }
}

} // namespace detail

inline std::filesystem::path cache_stem(const std::filesystem::path& dir, const std::string& key, Index k) {
    return dir / (key + ".k" + std::to_string(k));
}

inline void write_spectral_cache(const std::filesystem::path& dir, const std::string& key, std::uint64_t mesh_hash,
                                 const SpectralBasis& basis) {
    std::filesystem::create_directories(dir);
    const auto stem = cache_stem(dir, key, basis.order());
    const std::string blob = detail::encode_basis(basis);
    nlohmann::json side;
    side["schema_version"] = 1;
    side["mesh_hash"] = hex64(mesh_hash);
    side["n"] = basis.size();
    side["k"] = basis.order();
    side["blob_fnv1a"] = hex64(detail::fnv1a(blob));
    side["residuals"] = std::vector<double>(basis.residuals.data(), basis.residuals.data() + basis.residuals.size());
    detail::atomic_write(std::filesystem::path(stem.string() + ".bin"), blob);
    detail::atomic_write(std::filesystem::path(stem.string() + ".json"), side.dump(2) + "\n");
}

/// Loads a cached basis if present, matching and intact; otherwise reports why not.
inline std::optional<SpectralBasis> read_spectral_cache(const std::filesystem::path& dir, const std::string& key,
                                                        Index k, std::uint64_t mesh_hash, CacheOutcome& outcome) {
    const auto stem = cache_stem(dir, key, k);
    outcome.blob = stem.string() + ".bin";
    outcome.sidecar = stem.string() + ".json";
    outcome.mesh_hash = mesh_hash;
    if (!std::filesystem::exists(outcome.sidecar) || !std::filesystem::exists(outcome.blob)) {
        outcome.status = CacheStatus::miss;
        return std::nullopt;
    }
    nlohmann::json side;
    try {
        side = nlohmann::json::parse(detail::slurp(outcome.sidecar));
        if (side.at("mesh_hash").get<std::string>() != hex64(mesh_hash)) {
            outcome.status = CacheStatus::stale;
            outcome.detail = "mesh hash changed";
            return std::nullopt;
        }
        const std::string blob = detail::slurp(outcome.blob);
        if (side.at("blob_fnv1a").get<std::string>() != hex64(detail::fnv1a(blob))) {
            outcome.status = CacheStatus::corrupt;
            outcome.detail = "blob checksum mismatch";
            return std::nullopt;
        }
        SpectralBasis b = detail::decode_basis(blob);
        const auto res = side.at("residuals").get<std::vector<double>>();
        if (b.order() != k || side.at("k").get<Index>() != k || static_cast<Index>(res.size()) != k) {
            outcome.status = CacheStatus::corrupt;
            outcome.detail = "basis order does not match";
            return std::nullopt;
        }
        b.residuals = Eigen::Map<const Eigen::VectorXd>(res.data(), k);
        outcome.status = CacheStatus::hit;
        return b;
    } catch (const nlohmann::json::exception& e) {
        outcome.status = CacheStatus::corrupt;
        outcome.detail = std::string("unreadable sidecar: ") + e.what();
    } catch (const ParseError& e) {
        outcome.status = CacheStatus::corrupt;
        outcome.detail = e.what();
    }
    return std::nullopt;
}

/// prepare_shape backed by the cache: a hit skips the eigensolve, anything
/// else recomputes and rewrites the entry. An empty `dir` disables caching.
inline Shape prepare_shape_cached(TriangleMesh mesh, Index k, const std::filesystem::path& dir, std::string key,
                                  CacheOutcome* outcome = nullptr, const EigenOptions& opt = {}) {
    CacheOutcome local;
    CacheOutcome& out = outcome ? *outcome : local;
    out = {};
    if (dir.empty()) return prepare_shape(std::move(mesh), k, opt);
    k = std::min<Index>(k, mesh.num_vertices());
    const std::uint64_t h = mesh_hash(mesh);
    if (key.empty()) key = hex64(h);
    auto b = read_spectral_cache(dir, key, k, h, out);
    if (b && b->size() != mesh.num_vertices()) {
        b.reset();
        out.status = CacheStatus::corrupt;
        out.detail = "vertex count does not match";
    }
    if (b) {
        Shape s;
        s.ops = build_operators(mesh);
        s.basis = std::move(*b);
        s.mesh = std::move(mesh);
        return s;
    }
    Shape s = prepare_shape(std::move(mesh), k, opt);
    write_spectral_cache(dir, key, h, s.basis);
    return s;
}

} // namespace syncdiff
