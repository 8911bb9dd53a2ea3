#pragma once

// JSON/CSV serialisation of configurations, metrics and traces. Numbers are
// written with round-trip precision so re-runs compare byte for byte.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "syncdiff/pipeline.hpp"
#include "syncdiff/synthetic.hpp"

namespace syncdiff {

using Json = nlohmann::ordered_json;

inline constexpr int schema_version = 1;
inline constexpr const char* tool_version = "0.1.0";

template <class E, std::size_t N>
E parse_enum(const std::string& s, const E (&values)[N], const char* what) {
    std::string options;
    for (E v : values) {
        if (s == to_string(v)) return v;
        options += (options.empty() ? "" : ", ") + std::string(to_string(v));
    }
    throw ConfigError("unknown " + std::string(what) + " '" + s + "' (expected one of: " + options + ")");
}

inline const char* to_string(Projection p) { return p == Projection::mass_weighted ? "mass_weighted" : "literal"; }

inline Regulariser parse_regulariser(const std::string& s) {
    static constexpr Regulariser all[] = {Regulariser::none, Regulariser::sync_diffusion, Regulariser::kernel,
                                          Regulariser::dirichlet, Regulariser::cycle};
    return parse_enum(s, all, "regulariser");
}
inline Parametrisation parse_parametrisation(const std::string& s) {
    static constexpr Parametrisation all[] = {Parametrisation::features, Parametrisation::direct_scores};
    return parse_enum(s, all, "parametrisation");
}
inline DescriptorKind parse_descriptor_kind(const std::string& s) {
    static constexpr DescriptorKind all[] = {DescriptorKind::wks, DescriptorKind::hks, DescriptorKind::xyz};
    return parse_enum(s, all, "descriptor");
}
inline Projection parse_projection(const std::string& s) {
    static constexpr Projection all[] = {Projection::mass_weighted, Projection::literal};
    return parse_enum(s, all, "projection");
}

namespace detail {

/// Reads the keys of `j` through `read` and rejects any it does not know.
class StrictReader {
public:
    StrictReader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
    }
    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (auto it = j_.find(key); it != j_.end()) {
            try {
                out = it->template get<T>();
            } catch (const nlohmann::json::exception&) {
                throw ConfigError(where_ + "." + key + " has the wrong type");
            }
        }
    }
    template <class E>
    void get_enum(const char* key, E& out, E (*parse)(const std::string&)) {
        std::string s;
        get(key, s);
        if (!s.empty()) out = parse(s);
    }
    const Json* sub(const char* key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }
    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where_);
    }

private:
    const Json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

} // namespace detail

inline Json to_json(const SyntheticPairSpec& s) {
    return Json{{"kind", to_string(s.kind)},   {"base", to_string(s.base)}, {"resolution", s.resolution},
                {"noise", s.noise},            {"bend", s.bend},            {"strain", s.strain},
                {"seed", s.seed}};
}

inline SyntheticPairSpec synthetic_from_json(const Json& j) {
    SyntheticPairSpec s;
    detail::StrictReader r(j, "synthetic");
    r.get_enum("kind", s.kind, parse_pair_kind);
    r.get_enum("base", s.base, parse_base_shape);
    r.get("resolution", s.resolution);
    r.get("noise", s.noise);
    r.get("bend", s.bend);
    r.get("strain", s.strain);
    r.get("seed", s.seed);
    r.finish();
    return s;
}

inline Json to_json(const EnergyConfig& c) {
    Json j{{"h", c.h},
           {"T", c.T},
           {"tau", c.tau},
           {"lambda_couple", c.lambda_couple},
           {"lambda_struct", c.lambda_struct},
           {"lambda_bij", c.lambda_bij},
           {"lambda_orth", c.lambda_orth},
           {"fmap_lambda", c.fmap_lambda},
           {"seed", c.seed},
           {"regulariser", to_string(c.regulariser)},
           {"fixed_time", nullptr},
           {"eigfunc_init", c.eigfunc_init},
           {"symmetrise", c.symmetrise},
           {"projection", to_string(c.projection)},
           {"kernel_cap", c.kernel_cap}};
    if (c.fixed_time) j["fixed_time"] = *c.fixed_time;
    return j;
}

inline EnergyConfig energy_from_json(const Json& j) {
    EnergyConfig c;
    detail::StrictReader r(j, "energy");
    r.get("h", c.h);
    r.get("T", c.T);
    r.get("tau", c.tau);
    r.get("lambda_couple", c.lambda_couple);
    r.get("lambda_struct", c.lambda_struct);
    r.get("lambda_bij", c.lambda_bij);
    r.get("lambda_orth", c.lambda_orth);
    r.get("fmap_lambda", c.fmap_lambda);
    r.get("seed", c.seed);
    r.get_enum("regulariser", c.regulariser, parse_regulariser);
    if (const Json* ft = r.sub("fixed_time"); ft && !ft->is_null()) {
        if (!ft->is_number()) throw ConfigError("energy.fixed_time must be a number or null");
        c.fixed_time = ft->get<double>();
    }
    r.get("eigfunc_init", c.eigfunc_init);
    r.get("symmetrise", c.symmetrise);
    r.get_enum("projection", c.projection, parse_projection);
    r.get("kernel_cap", c.kernel_cap);
    r.finish();
    return c;
}

inline Json to_json(const OptimConfig& c) {
    return Json{{"max_iters", c.max_iters},
                {"initial_step", c.initial_step},
                {"backtrack", c.backtrack},
                {"armijo", c.armijo},
                {"max_backtracks", c.max_backtracks},
                {"grad_tolerance", c.grad_tolerance},
                {"resample_each_iter", c.resample_each_iter},
                {"parametrisation", to_string(c.parametrisation)}};
}

inline OptimConfig optim_from_json(const Json& j) {
    OptimConfig c;
    detail::StrictReader r(j, "optim");
    r.get("max_iters", c.max_iters);
    r.get("initial_step", c.initial_step);
    r.get("backtrack", c.backtrack);
    r.get("armijo", c.armijo);
    r.get("max_backtracks", c.max_backtracks);
    r.get("grad_tolerance", c.grad_tolerance);
    r.get("resample_each_iter", c.resample_each_iter);
    r.get_enum("parametrisation", c.parametrisation, parse_parametrisation);
    r.finish();
    return c;
}

inline Json to_json(const PipelineConfig& c) {
    return Json{{"k", c.k},
                {"descriptor", to_string(c.descriptor)},
                {"descriptor_dim", c.descriptor_dim},
                {"standardise", c.standardise},
                {"mode", to_string(c.mode)},
                {"decoder", to_string(c.decoder)},
                {"max_threshold", c.max_threshold},
                {"pck_samples", c.pck_samples},
                {"energy", to_json(c.energy)},
                {"optim", to_json(c.optim)}};
}

inline PipelineConfig pipeline_from_json(const Json& j) {
    PipelineConfig c;
    detail::StrictReader r(j, "pipeline");
    r.get("k", c.k);
    r.get_enum("descriptor", c.descriptor, parse_descriptor_kind);
    r.get("descriptor_dim", c.descriptor_dim);
    r.get("standardise", c.standardise);
    r.get_enum("mode", c.mode, parse_match_mode);
    r.get_enum("decoder", c.decoder, parse_decoder);
    r.get("max_threshold", c.max_threshold);
    r.get("pck_samples", c.pck_samples);
    if (const Json* e = r.sub("energy")) c.energy = energy_from_json(*e);
    if (const Json* o = r.sub("optim")) c.optim = optim_from_json(*o);
    r.finish();
    return c;
}

inline Json to_json(const Metrics& m) {
    return Json{{"mean_geo_error_x100", m.mean_geo_error_x100},
                {"auc", m.auc},
                {"coverage", m.coverage},
                {"smoothness", m.smoothness},
                {"max_threshold", m.max_threshold},
                {"auc_normalisation", "trapezoid area divided by max_threshold"}};
}

inline Json to_json(const EnergyBreakdown& e) {
    return Json{{"schema_version", schema_version},
                {"regulariser", to_string(e.regulariser)},
                {"l_diff", e.l_diff},
                {"l_couple", e.l_couple},
                {"l_struct", e.l_struct},
                {"l_total", e.l_total},
                {"per_time_terms", e.per_time_terms},
                {"seed", e.seed}};
}

/// Summary JSON of one matched pair.
inline Json metrics_json(const PairResult& r, const PipelineConfig& cfg) {
    Json j{{"schema_version", schema_version},
           {"mode", to_string(cfg.mode)},
           {"decoder", to_string(r.decoder)},
           {"descriptor", to_string(cfg.descriptor)},
           {"metrics", nullptr},
           {"init_metrics", nullptr}};
    if (r.metrics) j["metrics"] = to_json(*r.metrics);
    if (r.init_metrics) j["init_metrics"] = to_json(*r.init_metrics);
    return j;
}

inline std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << text;
    if (!out) throw ConfigError("write failed for " + path.string());
}

inline void write_json(const std::filesystem::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

inline std::string pck_csv(const Metrics& m) {
    std::string s = "threshold,pck\n";
    for (std::size_t i = 0; i < m.thresholds.size(); ++i) s += fmt_double(m.thresholds[i]) + "," + fmt_double(m.pck[i]) + "\n";
    return s;
}

inline std::string trace_csv(const std::vector<TraceRow>& trace) {
    std::string s = "iter,l_diff,l_couple,l_struct,l_total,step_size\n";
    for (const auto& r : trace) {
        s += std::to_string(r.iter) + "," + fmt_double(r.l_diff) + "," + fmt_double(r.l_couple) + "," +
             fmt_double(r.l_struct) + "," + fmt_double(r.l_total) + "," + fmt_double(r.step_size) + "\n";
    }
    return s;
}

inline Json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what(), 0, e.byte);
    }
}

} // namespace syncdiff
