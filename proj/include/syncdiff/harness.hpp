#pragma once

// Run-level plumbing shared by the command-line tool and the acceptance
// suite: pair loading, cached preprocessing, the match / sweep / eval runs,
// and the manifest that lets a run be replayed exactly.

#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "syncdiff/mesh_io.hpp"
#include "syncdiff/report.hpp"
#include "syncdiff/spectral_cache.hpp"

namespace syncdiff {

namespace fs = std::filesystem;

/// Either a synthetic pair or a pair of mesh files (with optional ground truth).
struct PairInput {
    std::optional<SyntheticPairSpec> synthetic;
    std::string mesh_M, mesh_N, gt;
};

inline Json to_json(const PairInput& in) {
    if (in.synthetic) return Json{{"synthetic", to_json(*in.synthetic)}};
    return Json{{"mesh_M", in.mesh_M}, {"mesh_N", in.mesh_N}, {"gt", in.gt}};
}

inline PairInput pair_input_from_json(const Json& j) {
    PairInput in;
    detail::StrictReader r(j, "inputs");
    if (const Json* s = r.sub("synthetic")) in.synthetic = synthetic_from_json(*s);
    r.get("mesh_M", in.mesh_M);
    r.get("mesh_N", in.mesh_N);
    r.get("gt", in.gt);
    r.finish();
    return in;
}

/// Everything that determines a run's outputs.
struct Job {
    std::string command;             ///< match | sweep-time | sweep-ablation | generate
    PairInput input;
    PipelineConfig pipeline;
    std::uint64_t seed = 0;
    int num_seeds = 1;               ///< sweeps: seeds seed, seed+1, ...
    std::vector<double> T_list;      ///< sweep-time only
};

inline Json job_json(const Job& job) {
    Json j{{"command", job.command},
           {"inputs", to_json(job.input)},
           {"seed", job.seed},
           {"num_seeds", job.num_seeds},
           {"pipeline", to_json(job.pipeline)}};
    if (job.command == "sweep-time") j["T_list"] = job.T_list;
    return j;
}

inline Job job_from_manifest(const Json& manifest) {
    detail::StrictReader top(manifest, "manifest");
    int version = 0;
    top.get("schema_version", version);
    if (version != schema_version) throw ConfigError("manifest schema_version " + std::to_string(version) + " is not supported");
    std::string tool;
    top.get("tool_version", tool);
    top.sub("cache");
    top.sub("results");
    const Json* jj = top.sub("job");
    if (!jj) throw ConfigError("manifest has no job section");
    top.finish();

    Job job;
    detail::StrictReader r(*jj, "job");
    r.get("command", job.command);
    if (const Json* in = r.sub("inputs")) job.input = pair_input_from_json(*in);
    r.get("seed", job.seed);
    r.get("num_seeds", job.num_seeds);
    if (const Json* p = r.sub("pipeline")) job.pipeline = pipeline_from_json(*p);
    r.get("T_list", job.T_list);
    r.finish();
    return job;
}

/// Where caches live and how chatty / parallel a run is.
struct RunContext {
    fs::path cache_dir;  ///< empty disables the spectral cache
    int jobs = 1;
    std::function<void(const std::string&)> log = [](const std::string&) {};
};

struct LoadedPair {
    TriangleMesh M, N;
    std::optional<HardCorrespondence> gt;
    std::string key_M, key_N;  ///< cache keys
};

/// Mesh files are normalised to unit area so that diffusion times mean the same on every input.
inline TriangleMesh load_for_matching(const fs::path& path) {
    TriangleMesh m = load_mesh(path);
    if (auto issues = validate_mesh(m); !issues.empty()) {
        throw MeshError(path.string() + ": " + to_string(issues.front().code) + ": " + issues.front().detail);
    }
    return normalize_to_unit_area(m);
}

inline LoadedPair load_pair(const PairInput& in, std::uint64_t seed) {
    LoadedPair p;
    if (in.synthetic) {
        SyntheticPairSpec spec = *in.synthetic;
        spec.seed = seed;
        SyntheticPair sp = generate_pair(spec);
        p.M = std::move(sp.M);
        p.N = std::move(sp.N);
        p.gt = std::move(sp.gt);
        const std::string stem = std::string("synthetic_") + to_string(spec.kind) + "_" + to_string(spec.base) + "_r" +
                                 std::to_string(spec.resolution) + "_s" + std::to_string(seed);
        p.key_M = stem + "_M";
        p.key_N = stem + "_N";
        return p;
    }
    if (in.mesh_M.empty() || in.mesh_N.empty()) throw ConfigError("two meshes or a synthetic spec are required");
    p.M = load_for_matching(in.mesh_M);
    p.N = load_for_matching(in.mesh_N);
    p.key_M = fs::path(in.mesh_M).stem().string();
    p.key_N = fs::path(in.mesh_N).stem().string();
    if (p.key_M == p.key_N) {
        p.key_M += "_M";
        p.key_N += "_N";
    }
    if (!in.gt.empty()) {
        p.gt = read_hard_correspondence(in.gt, p.N.num_vertices());
        if (p.gt->size() != p.M.num_vertices()) {
            throw ConfigError("ground truth has " + std::to_string(p.gt->size()) + " entries but M has " +
                              std::to_string(p.M.num_vertices()) + " vertices");
        }
    }
    return p;
}

inline Shape prepare_logged(TriangleMesh mesh, Index k, const std::string& key, const RunContext& ctx, Json* cache_log) {
    CacheOutcome out;
    Shape s = prepare_shape_cached(std::move(mesh), k, ctx.cache_dir, key, &out);
    if (!ctx.cache_dir.empty()) {
        std::string msg = "cache " + std::string(to_string(out.status)) + ": " + out.blob.filename().string();
        if (!out.detail.empty()) msg += " (" + out.detail + "; recomputed)";
        ctx.log(msg);
    }
    if (cache_log) cache_log->push_back(Json{{"key", key}, {"mesh_hash", hex64(mesh_hash(s.mesh))}, {"k", s.basis.order()}});
    return s;
}

/// Runs `count` independent tasks on up to `jobs` threads; the first exception is rethrown.
inline void parallel_for(int count, int jobs, const std::function<void(int)>& task) {
    if (jobs <= 1 || count <= 1) {
        for (int i = 0; i < count; ++i) task(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex m;
    std::vector<std::thread> pool;
    for (int t = 0; t < std::min(jobs, count); ++t) {
        pool.emplace_back([&] {
            for (int i = next++; i < count; i = next++) {
                try {
                    task(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(m);
                    if (!failure) failure = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
}

inline double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline Json manifest_json(const Job& job, Json cache, Json results) {
    return Json{{"schema_version", schema_version},
                {"tool_version", tool_version},
                {"job", job_json(job)},
                {"cache", std::move(cache)},
                {"results", std::move(results)}};
}

inline std::vector<std::uint64_t> job_seeds(const Job& job) {
    if (job.num_seeds < 1) throw ConfigError("num_seeds must be at least 1");
    std::vector<std::uint64_t> s;
    for (int i = 0; i < job.num_seeds; ++i) s.push_back(job.seed + static_cast<std::uint64_t>(i));
    return s;
}

// --- runs --------------------------------------------------------------------

/// Single pair: both maps, metrics, PCK curve, energy trace and breakdown.
inline Json run_match(const Job& job, const fs::path& out_dir, const RunContext& ctx) {
    const LoadedPair pair = load_pair(job.input, job.seed);
    PipelineConfig cfg = job.pipeline;
    cfg.energy.seed = job.seed;
    Json cache = Json::array();
    const Shape M = prepare_logged(pair.M, cfg.k, pair.key_M, ctx, &cache);
    const Shape N = prepare_logged(pair.N, cfg.k, pair.key_N, ctx, &cache);
    const PairResult r = run_pair(M, N, cfg, pair.gt ? &*pair.gt : nullptr);

    fs::create_directories(out_dir);
    Json files = Json::array();
    write_hard_correspondence(r.map_MN, out_dir / "map_MN.txt");
    write_hard_correspondence(r.map_NM, out_dir / "map_NM.txt");
    files.push_back("map_MN.txt");
    files.push_back("map_NM.txt");
    write_json(out_dir / "metrics.json", metrics_json(r, cfg));
    files.push_back("metrics.json");
    if (r.metrics) {
        write_text(out_dir / "pck.csv", pck_csv(*r.metrics));
        files.push_back("pck.csv");
    }
    if (cfg.mode == MatchMode::refine) {
        write_text(out_dir / "trace.csv", trace_csv(r.trace));
        write_json(out_dir / "energy.json", to_json(*r.energy));
        files.push_back("trace.csv");
        files.push_back("energy.json");
    }
    Json result{{"seed", job.seed}, {"decoder", to_string(r.decoder)}, {"files", files}, {"metrics", nullptr}};
    if (r.metrics) result["metrics"] = to_json(*r.metrics);
    const Json manifest = manifest_json(job, cache, Json::array({result}));
    write_json(out_dir / "manifest.json", manifest);
    return manifest;
}

/// One row of a sweep: a named configuration evaluated on one seed.
struct SweepCell {
    std::string setting;
    std::uint64_t seed = 0;
    Metrics metrics;
};

namespace detail {

/// Evaluates every (seed, configuration) cell; shapes are prepared once per seed.
inline std::vector<SweepCell> run_grid(const Job& job, const std::vector<std::pair<std::string, PipelineConfig>>& configs,
                                       const RunContext& ctx, Json& cache) {
    const auto seeds = job_seeds(job);
    struct Prepared {
        std::optional<Shape> M, N;
        HardCorrespondence gt;
        Json cache = Json::array();
    };
    std::vector<Prepared> prep(seeds.size());
    parallel_for(static_cast<int>(seeds.size()), ctx.jobs, [&](int i) {
        LoadedPair pair = load_pair(job.input, seeds[i]);
        if (!pair.gt) throw ConfigError("sweeps need ground truth");
        prep[i].gt = *pair.gt;
        prep[i].M.emplace(prepare_logged(std::move(pair.M), job.pipeline.k, pair.key_M, ctx, &prep[i].cache));
        prep[i].N.emplace(prepare_logged(std::move(pair.N), job.pipeline.k, pair.key_N, ctx, &prep[i].cache));
    });
    for (auto& p : prep)
        for (auto& c : p.cache) cache.push_back(c);

    const int nc = static_cast<int>(configs.size());
    std::vector<SweepCell> cells(seeds.size() * configs.size());
    parallel_for(static_cast<int>(cells.size()), ctx.jobs, [&](int idx) {
        const int s = idx / nc, c = idx % nc;
        PipelineConfig cfg = configs[c].second;
        cfg.energy.seed = seeds[s];
        const PairResult r = run_pair(*prep[s].M, *prep[s].N, cfg, &prep[s].gt);
        cells[idx] = {configs[c].first, seeds[s], *r.metrics};
    });
    return cells;
}

inline std::string runs_csv(const char* first, const std::vector<SweepCell>& cells) {
    std::string s = std::string(first) + ",seed,mean_geo_error_x100,auc,coverage,smoothness\n";
    for (const auto& c : cells) {
        s += c.setting + "," + std::to_string(c.seed) + "," + fmt_double(c.metrics.mean_geo_error_x100) + "," +
             fmt_double(c.metrics.auc) + "," + fmt_double(c.metrics.coverage) + "," + fmt_double(c.metrics.smoothness) + "\n";
    }
    return s;
}

struct SummaryRow {
    std::string setting;
    double error = 0, auc = 0, coverage = 0, smoothness = 0;
};

inline std::vector<SummaryRow> summarise(const std::vector<std::string>& order, const std::vector<SweepCell>& cells) {
    std::vector<SummaryRow> out;
    for (const auto& name : order) {
        std::vector<double> e, a, c, s;
        for (const auto& cell : cells) {
            if (cell.setting != name) continue;
            e.push_back(cell.metrics.mean_geo_error_x100);
            a.push_back(cell.metrics.auc);
            c.push_back(cell.metrics.coverage);
            s.push_back(cell.metrics.smoothness);
        }
        out.push_back({name, median(e), median(a), median(c), median(s)});
    }
    return out;
}

inline Json summary_json(const std::vector<SummaryRow>& rows, const char* key) {
    Json arr = Json::array();
    for (const auto& r : rows) {
        arr.push_back(Json{{key, r.setting},
                           {"median_mean_geo_error_x100", r.error},
                           {"median_auc", r.auc},
                           {"median_coverage", r.coverage},
                           {"median_smoothness", r.smoothness}});
    }
    return arr;
}

} // namespace detail

struct SweepResult {
    std::vector<SweepCell> cells;
    std::vector<detail::SummaryRow> summary; ///< medians over seeds, in sweep order
    Json manifest;
};

/// Median metrics per maximum diffusion time T.
inline SweepResult run_sweep_time(const Job& job, const fs::path& out_dir, const RunContext& ctx) {
    if (job.T_list.empty()) throw ConfigError("sweep-time needs at least one T");
    std::vector<std::pair<std::string, PipelineConfig>> configs;
    std::vector<std::string> names;
    for (double T : job.T_list) {
        if (!(T >= 0.0)) throw ConfigError("every T must be non-negative");
        PipelineConfig c = job.pipeline;
        c.energy.T = T;
        c.mode = MatchMode::refine;
        names.push_back(fmt_double(T));
        configs.emplace_back(names.back(), c);
    }
    SweepResult res;
    Json cache = Json::array();
    res.cells = detail::run_grid(job, configs, ctx, cache);
    res.summary = detail::summarise(names, res.cells);

    std::string csv = "T,mean_geo_error_x100,auc,smoothness,coverage,num_seeds\n";
    for (const auto& r : res.summary) {
        csv += r.setting + "," + fmt_double(r.error) + "," + fmt_double(r.auc) + "," + fmt_double(r.smoothness) + "," +
               fmt_double(r.coverage) + "," + std::to_string(job.num_seeds) + "\n";
    }
    fs::create_directories(out_dir);
    write_text(out_dir / "sweep_time.csv", csv);
    write_text(out_dir / "sweep_time_runs.csv", detail::runs_csv("T", res.cells));
    res.manifest = manifest_json(job, cache, detail::summary_json(res.summary, "T"));
    write_json(out_dir / "manifest.json", res.manifest);
    return res;
}

/// The full loss against its six ablations, one row each.
inline SweepResult run_sweep_ablation(const Job& job, const fs::path& out_dir, const RunContext& ctx) {
    std::vector<std::pair<std::string, PipelineConfig>> configs;
    std::vector<std::string> names;
    for (const auto& a : ablation_settings(job.pipeline.energy)) {
        PipelineConfig c = job.pipeline;
        c.energy = a.energy;
        c.mode = MatchMode::refine;
        names.push_back(a.name);
        configs.emplace_back(a.name, c);
    }
    SweepResult res;
    Json cache = Json::array();
    res.cells = detail::run_grid(job, configs, ctx, cache);
    res.summary = detail::summarise(names, res.cells);

    std::string csv = "setting,mean_geo_error_x100,auc,coverage,smoothness,num_seeds\n";
    for (const auto& r : res.summary) {
        csv += r.setting + "," + fmt_double(r.error) + "," + fmt_double(r.auc) + "," + fmt_double(r.coverage) + "," +
               fmt_double(r.smoothness) + "," + std::to_string(job.num_seeds) + "\n";
    }
    fs::create_directories(out_dir);
    write_text(out_dir / "ablation.csv", csv);
    write_text(out_dir / "ablation_runs.csv", detail::runs_csv("setting", res.cells));
    res.manifest = manifest_json(job, cache, detail::summary_json(res.summary, "setting"));
    write_json(out_dir / "manifest.json", res.manifest);
    return res;
}

/// Writes a synthetic pair as two OFF files and its ground truth.
inline Json run_generate(const Job& job, const fs::path& out_dir) {
    if (!job.input.synthetic) throw ConfigError("generate needs a synthetic spec");
    const LoadedPair p = load_pair(job.input, job.seed);
    fs::create_directories(out_dir);
    write_off(p.M, out_dir / "M.off");
    write_off(p.N, out_dir / "N.off");
    write_hard_correspondence(*p.gt, out_dir / "gt.txt");
    Json result{{"seed", job.seed},
                {"files", Json::array({"M.off", "N.off", "gt.txt"})},
                {"n_M", p.M.num_vertices()},
                {"n_N", p.N.num_vertices()}};
    const Json manifest = manifest_json(job, Json::array(), Json::array({result}));
    write_json(out_dir / "manifest.json", manifest);
    return manifest;
}

/// Scores a stored map against ground truth on the target mesh.
inline Json run_eval(const fs::path& pred_path, const fs::path& gt_path, const fs::path& mesh_N_path,
                     const fs::path& mesh_M_path, double max_threshold, int samples, const fs::path& out_dir) {
    const TriangleMesh N = load_for_matching(mesh_N_path);
    const HardCorrespondence pred = read_hard_correspondence(pred_path, N.num_vertices());
    const HardCorrespondence gt = read_hard_correspondence(gt_path, N.num_vertices());
    ErrorProfile prof = geodesic_error(pred, gt, N);
    pck_and_auc(prof, max_threshold, samples);
    Metrics m;
    m.mean_geo_error_x100 = prof.mean_x100();
    m.auc = prof.auc;
    m.coverage = coverage(pred, N.num_vertices());
    m.max_threshold = max_threshold;
    m.thresholds = prof.thresholds;
    m.pck = prof.pck;
    Json jm = to_json(m);
    if (!mesh_M_path.empty()) {
        const TriangleMesh M = load_for_matching(mesh_M_path);
        if (M.num_vertices() != pred.size()) throw ConfigError("source mesh does not match the map length");
        jm["smoothness"] = map_smoothness(pred, N.vertices(), build_operators(M).stiffness);
    } else {
        jm["smoothness"] = nullptr;
    }
    const Json out{{"schema_version", schema_version}, {"metrics", jm}};
    fs::create_directories(out_dir);
    write_json(out_dir / "metrics.json", out);
    write_text(out_dir / "pck.csv", pck_csv(m));
    return out;
}

/// Builds (or confirms) cache entries for each mesh; returns one record per mesh.
inline Json run_preprocess(const std::vector<std::string>& meshes, Index k, const RunContext& ctx) {
    if (ctx.cache_dir.empty()) throw ConfigError("preprocess needs a cache directory");
    Json out = Json::array();
    for (const auto& path : meshes) {
        CacheOutcome oc;
        TriangleMesh m = load_for_matching(path);
        const Shape s = prepare_shape_cached(std::move(m), k, ctx.cache_dir, fs::path(path).stem().string(), &oc);
        std::string msg = "cache " + std::string(to_string(oc.status)) + ": " + oc.blob.string();
        if (!oc.detail.empty()) msg += " (" + oc.detail + "; recomputed)";
        ctx.log(msg);
        out.push_back(Json{{"mesh", path},
                           {"status", to_string(oc.status)},
                           {"blob", oc.blob.string()},
                           {"mesh_hash", hex64(oc.mesh_hash)},
                           {"k", s.basis.order()},
                           {"max_residual", s.basis.residuals.size() ? s.basis.residuals.maxCoeff() : 0.0}});
    }
    return out;
}

} // namespace syncdiff
