// syncdiff: preprocess, generate, match, sweep-time, sweep-ablation, eval.

#include <cstdlib>
#include <cstring>
#include <iostream>
#include <mutex>

#include <CLI11.hpp>

#include "syncdiff/harness.hpp"

using namespace syncdiff;

namespace {

struct Common {
    std::uint64_t seed = 0;
    bool json_errors = false;
    std::string cache_dir;
    int jobs = 1;
    bool quiet = false;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--seed", c.seed, "Seed for pair generation and probe sampling")->capture_default_str();
    sub->add_flag("--json-errors", c.json_errors, "Report failures as one JSON object on stderr");
    sub->add_option("--cache-dir", c.cache_dir, "Spectral cache directory (env SYNCDIFF_CACHE_DIR)")
        ->envname("SYNCDIFF_CACHE_DIR");
    sub->add_option("--jobs", c.jobs, "Pairs processed in parallel")->check(CLI::PositiveNumber)->capture_default_str();
    sub->add_flag("--quiet", c.quiet, "Suppress progress messages");
}

/// Raw option values; applied onto defaults only when given.
struct PairFlags {
    std::string mesh_M, mesh_N, gt;
    std::string kind, base = "cylinder";
    int resolution = 40;
    double noise = 0.01, bend = 1.0, strain = 0.008;
};

void add_pair(CLI::App* sub, PairFlags& p, std::vector<CLI::Option*>& cfg_opts, bool files = true) {
    if (files) {
        cfg_opts.push_back(sub->add_option("--mesh-m", p.mesh_M, "Source mesh (OFF/PLY)"));
        cfg_opts.push_back(sub->add_option("--mesh-n", p.mesh_N, "Target mesh (OFF/PLY)"));
        cfg_opts.push_back(sub->add_option("--gt", p.gt, "Ground-truth map M -> N, one target index per line"));
    }
    cfg_opts.push_back(sub->add_option("--kind", p.kind, "Synthetic pair kind")
                           ->check(CLI::IsMember({"identity", "permuted", "rigid_noise", "isometric_bend",
                                                  "topological_glue"})));
    cfg_opts.push_back(sub->add_option("--base", p.base, "Synthetic base shape")
                           ->check(CLI::IsMember({"cylinder", "plane", "sphere"}))
                           ->capture_default_str());
    cfg_opts.push_back(sub->add_option("--resolution", p.resolution,
                                       "Strip columns (cylinder/plane) or subdivision level (sphere)")
                           ->capture_default_str());
    cfg_opts.push_back(sub->add_option("--noise", p.noise, "rigid_noise jitter, in mean edge lengths")->capture_default_str());
    cfg_opts.push_back(sub->add_option("--bend", p.bend, "isometric_bend amplitude")->capture_default_str());
    cfg_opts.push_back(sub->add_option("--strain", p.strain, "isometric_bend intrinsic stretch")->capture_default_str());
}

PairInput make_input(const PairFlags& p) {
    PairInput in;
    if (!p.kind.empty()) {
        if (!p.mesh_M.empty() || !p.mesh_N.empty()) throw ConfigError("give either --kind or --mesh-m/--mesh-n, not both");
        SyntheticPairSpec s;
        s.kind = parse_pair_kind(p.kind);
        s.base = parse_base_shape(p.base);
        s.resolution = p.resolution;
        s.noise = p.noise;
        s.bend = p.bend;
        s.strain = p.strain;
        in.synthetic = s;
    } else {
        if (p.mesh_M.empty() || p.mesh_N.empty()) throw ConfigError("need --kind or both --mesh-m and --mesh-n");
        in.mesh_M = p.mesh_M;
        in.mesh_N = p.mesh_N;
        in.gt = p.gt;
    }
    return in;
}

struct PipelineFlags {
    PipelineConfig cfg;
    std::string mode = "refine", decoder = "soft_argmax", descriptor = "wks", preset = "near_isometric";
    std::string energy, projection = "mass_weighted", parametrisation = "features";
    bool no_standardise = false, no_ldiff = false, init_eigfuncs = false, symmetrise = false, resample = false;
    std::optional<double> fixed_t, T;
};

void add_pipeline(CLI::App* sub, PipelineFlags& f, std::vector<CLI::Option*>& o, bool with_mode = true) {
    auto& c = f.cfg;
    if (with_mode) {
        o.push_back(sub->add_option("--mode", f.mode, "Matching mode")
                        ->check(CLI::IsMember({"descriptor_nn", "fmap", "refine"}))
                        ->capture_default_str());
    }
    o.push_back(sub->add_option("--decoder", f.decoder, "Hard map decoder after refinement")
                    ->check(CLI::IsMember({"soft_argmax", "fmap_nn"}))
                    ->capture_default_str());
    o.push_back(sub->add_option("--k", c.k, "Spectral basis size")->check(CLI::PositiveNumber)->capture_default_str());
    o.push_back(sub->add_option("--descriptor", f.descriptor, "Input descriptor")
                    ->check(CLI::IsMember({"wks", "hks", "xyz"}))
                    ->capture_default_str());
    o.push_back(sub->add_option("--descriptor-dim", c.descriptor_dim, "Descriptor width")->capture_default_str());
    o.push_back(sub->add_flag("--no-standardise", f.no_standardise, "Use raw descriptor columns as features"));
    o.push_back(sub->add_option("--preset", f.preset, "Diffusion-time preset (T = 1e-2 or 1e-4)")
                    ->check(CLI::IsMember({"near_isometric", "non_isometric"}))
                    ->capture_default_str());
    o.push_back(sub->add_option("--T", f.T, "Maximum diffusion time (overrides the preset)"));
    o.push_back(sub->add_option("--h", c.energy.h, "Number of random probe functions")->capture_default_str());
    o.push_back(sub->add_option("--tau", c.energy.tau, "Softmax temperature")->capture_default_str());
    o.push_back(sub->add_option("--lambda-couple", c.energy.lambda_couple)->capture_default_str());
    o.push_back(sub->add_option("--lambda-struct", c.energy.lambda_struct)->capture_default_str());
    o.push_back(sub->add_option("--lambda-bij", c.energy.lambda_bij)->capture_default_str());
    o.push_back(sub->add_option("--lambda-orth", c.energy.lambda_orth)->capture_default_str());
    o.push_back(sub->add_option("--fmap-lambda", c.energy.fmap_lambda, "Functional map commutativity weight")
                    ->capture_default_str());
    o.push_back(sub->add_flag("--no-ldiff", f.no_ldiff, "Drop the diffusion regulariser"));
    o.push_back(sub->add_option("--fixed-t", f.fixed_t, "Diffuse every probe for this single time"));
    o.push_back(sub->add_flag("--init-eigfuncs", f.init_eigfuncs, "Use eigenfunctions instead of random probes"));
    o.push_back(sub->add_option("--energy", f.energy, "Replace the regulariser")
                    ->check(CLI::IsMember({"sync_diffusion", "kernel", "dirichlet", "cycle"})));
    o.push_back(sub->add_flag("--symmetrise", f.symmetrise, "Add the N-started diffusion term"));
    o.push_back(sub->add_option("--projection", f.projection, "Spectral projection")
                    ->check(CLI::IsMember({"mass_weighted", "literal"}))
                    ->capture_default_str());
    o.push_back(sub->add_option("--iters", c.optim.max_iters, "Refinement iterations")->capture_default_str());
    o.push_back(sub->add_option("--step", c.optim.initial_step, "Length of the first step")->capture_default_str());
    o.push_back(sub->add_option("--backtrack", c.optim.backtrack, "Step shrink factor")->capture_default_str());
    o.push_back(sub->add_flag("--resample", f.resample, "Redraw probe functions every iteration"));
    o.push_back(sub->add_option("--parametrisation", f.parametrisation, "Refinement variables")
                    ->check(CLI::IsMember({"features", "direct_scores"}))
                    ->capture_default_str());
    o.push_back(sub->add_option("--max-threshold", c.max_threshold, "PCK range")->capture_default_str());
    o.push_back(sub->add_option("--pck-samples", c.pck_samples, "PCK thresholds")->capture_default_str());
}

PipelineConfig make_pipeline(const PipelineFlags& f) {
    PipelineConfig c = f.cfg;
    if (f.preset == "non_isometric") c.energy.T = EnergyConfig::non_isometric().T;
    if (f.T) c.energy.T = *f.T;
    c.mode = parse_match_mode(f.mode);
    c.decoder = parse_decoder(f.decoder);
    c.descriptor = parse_descriptor_kind(f.descriptor);
    c.standardise = !f.no_standardise;
    c.energy.projection = parse_projection(f.projection);
    c.energy.symmetrise = f.symmetrise;
    c.energy.eigfunc_init = f.init_eigfuncs;
    c.energy.fixed_time = f.fixed_t;
    if (f.no_ldiff && !f.energy.empty()) throw ConfigError("--no-ldiff and --energy are mutually exclusive");
    if (f.no_ldiff) c.energy.regulariser = Regulariser::none;
    if (!f.energy.empty()) c.energy.regulariser = parse_regulariser(f.energy);
    c.optim.resample_each_iter = f.resample;
    c.optim.parametrisation = parse_parametrisation(f.parametrisation);
    c.energy.validate();
    c.optim.validate();
    return c;
}

int exit_code(const std::string& kind) {
    if (kind == "usage_error") return 2;
    if (kind == "config_error") return 3;
    if (kind == "parse_error") return 4;
    if (kind == "mesh_error") return 5;
    if (kind == "solver_error") return 6;
    return 1;
}

int report_error(bool json, const std::string& kind, const std::string& message, const Json& extra = Json::object()) {
    if (json) {
        Json j{{"error", {{"kind", kind}, {"message", message}}}};
        for (auto it = extra.begin(); it != extra.end(); ++it) j["error"][it.key()] = it.value();
        std::cerr << j.dump() << std::endl;
    } else {
        std::cerr << "syncdiff: " << kind << ": " << message << std::endl;
    }
    return exit_code(kind);
}

/// --manifest replays a recorded job; it cannot be mixed with options that define one.
Job resolve_job(const std::string& command, const std::string& manifest, const std::vector<CLI::Option*>& cfg_opts,
                const std::function<Job()>& from_flags, const CLI::Option* seed_opt) {
    if (manifest.empty()) return from_flags();
    for (const auto* o : cfg_opts)
        if (o->count()) throw ConfigError("--manifest cannot be combined with " + o->get_name());
    if (seed_opt->count()) throw ConfigError("--manifest cannot be combined with --seed");
    Job job = job_from_manifest(read_json_file(manifest));
    if (job.command != command) throw ConfigError("manifest records a '" + job.command + "' run, not '" + command + "'");
    return job;
}

} // namespace

int main(int argc, char** argv) {
    bool json_errors = false;
    for (int i = 1; i < argc; ++i)
        if (std::strcmp(argv[i], "--json-errors") == 0) json_errors = true;

    CLI::App app{"Shape correspondence with synchronous-diffusion refinement"};
    app.require_subcommand(1);
    app.set_help_flag("--help", "Print this help message and exit");
    app.set_help_all_flag("--help-all");

    Common common;
    std::mutex log_mutex;
    auto context = [&] {
        RunContext ctx;
        ctx.cache_dir = common.cache_dir;
        ctx.jobs = common.jobs;
        if (!common.quiet) {
            ctx.log = [&log_mutex](const std::string& m) {
                std::lock_guard<std::mutex> lock(log_mutex);
                std::cerr << "[syncdiff] " << m << '\n';
            };
        }
        return ctx;
    };

    // preprocess
    auto* pre = app.add_subcommand("preprocess", "Compute and cache spectral bases");
    std::vector<std::string> pre_meshes;
    Index pre_k = 64;
    add_common(pre, common);
    pre->add_option("meshes", pre_meshes, "Mesh files")->required();
    pre->add_option("--k", pre_k, "Spectral basis size")->check(CLI::PositiveNumber)->capture_default_str();

    // generate
    auto* gen = app.add_subcommand("generate", "Write a synthetic pair and its ground truth");
    PairFlags gen_pair;
    std::vector<CLI::Option*> gen_opts;
    std::string gen_out, gen_manifest;
    add_common(gen, common);
    add_pair(gen, gen_pair, gen_opts, false);
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--manifest", gen_manifest, "Replay a recorded run");

    // match
    auto* match = app.add_subcommand("match", "Match one pair");
    PairFlags m_pair;
    PipelineFlags m_pipe;
    std::vector<CLI::Option*> m_opts;
    std::string m_out, m_manifest;
    add_common(match, common);
    add_pair(match, m_pair, m_opts);
    add_pipeline(match, m_pipe, m_opts);
    match->add_option("--out", m_out, "Output directory")->required();
    match->add_option("--manifest", m_manifest, "Replay a recorded run");

    // sweep-time
    auto* st = app.add_subcommand("sweep-time", "Refine over a list of maximum diffusion times");
    PairFlags st_pair;
    PipelineFlags st_pipe;
    std::vector<CLI::Option*> st_opts;
    std::string st_out, st_manifest;
    std::vector<double> st_T{1.0, 1e-1, 1e-2, 1e-3, 1e-4};
    int st_seeds = 5;
    add_common(st, common);
    add_pair(st, st_pair, st_opts);
    add_pipeline(st, st_pipe, st_opts, false);
    st_opts.push_back(st->add_option("--T-list", st_T, "Comma-separated maximum times")->delimiter(',')->capture_default_str());
    st_opts.push_back(st->add_option("--num-seeds", st_seeds, "Pairs per setting")->check(CLI::PositiveNumber)->capture_default_str());
    st->add_option("--out", st_out, "Output directory")->required();
    st->add_option("--manifest", st_manifest, "Replay a recorded run");

    // sweep-ablation
    auto* ab = app.add_subcommand("sweep-ablation", "Full loss against its six ablations");
    PairFlags ab_pair;
    PipelineFlags ab_pipe;
    std::vector<CLI::Option*> ab_opts;
    std::string ab_out, ab_manifest;
    int ab_seeds = 10;
    add_common(ab, common);
    add_pair(ab, ab_pair, ab_opts);
    add_pipeline(ab, ab_pipe, ab_opts, false);
    ab_opts.push_back(ab->add_option("--num-seeds", ab_seeds, "Pairs per setting")->check(CLI::PositiveNumber)->capture_default_str());
    ab->add_option("--out", ab_out, "Output directory")->required();
    ab->add_option("--manifest", ab_manifest, "Replay a recorded run");

    // eval
    auto* ev = app.add_subcommand("eval", "Score a stored map against ground truth");
    std::string ev_pred, ev_gt, ev_mn, ev_mm, ev_out;
    double ev_max = 0.1;
    int ev_samples = 101;
    add_common(ev, common);
    ev->add_option("--pred", ev_pred, "Predicted map M -> N")->required();
    ev->add_option("--gt", ev_gt, "Ground-truth map M -> N")->required();
    ev->add_option("--mesh-n", ev_mn, "Target mesh")->required();
    ev->add_option("--mesh-m", ev_mm, "Source mesh (enables the smoothness score)");
    ev->add_option("--max-threshold", ev_max, "PCK range")->capture_default_str();
    ev->add_option("--pck-samples", ev_samples, "PCK thresholds")->capture_default_str();
    ev->add_option("--out", ev_out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        if (!json_errors) return app.exit(e) == 0 ? 0 : 2;
        return report_error(true, "usage_error", e.what());
    }

    try {
        const RunContext ctx = context();
        auto seed_of = [&](CLI::App* sub) { return sub->get_option("--seed"); };

        if (pre->parsed()) {
            const Json out = run_preprocess(pre_meshes, pre_k, ctx);
            std::cout << Json{{"schema_version", schema_version}, {"entries", out}}.dump(2) << std::endl;
        } else if (gen->parsed()) {
            const Job job = resolve_job("generate", gen_manifest, gen_opts, [&] {
                Job j;
                j.command = "generate";
                if (gen_pair.kind.empty()) throw ConfigError("generate needs --kind");
                j.input = make_input(gen_pair);
                j.seed = common.seed;
                return j;
            }, seed_of(gen));
            std::cout << run_generate(job, gen_out).dump(2) << std::endl;
        } else if (match->parsed()) {
            const Job job = resolve_job("match", m_manifest, m_opts, [&] {
                Job j;
                j.command = "match";
                j.input = make_input(m_pair);
                j.pipeline = make_pipeline(m_pipe);
                j.seed = common.seed;
                return j;
            }, seed_of(match));
            const Json manifest = run_match(job, m_out, ctx);
            std::cout << manifest["results"][0].dump(2) << std::endl;
        } else if (st->parsed()) {
            const Job job = resolve_job("sweep-time", st_manifest, st_opts, [&] {
                Job j;
                j.command = "sweep-time";
                j.input = make_input(st_pair);
                j.pipeline = make_pipeline(st_pipe);
                j.seed = common.seed;
                j.num_seeds = st_seeds;
                j.T_list = st_T;
                return j;
            }, seed_of(st));
            const SweepResult r = run_sweep_time(job, st_out, ctx);
            std::cout << r.manifest["results"].dump(2) << std::endl;
        } else if (ab->parsed()) {
            const Job job = resolve_job("sweep-ablation", ab_manifest, ab_opts, [&] {
                Job j;
                j.command = "sweep-ablation";
                j.input = make_input(ab_pair);
                j.pipeline = make_pipeline(ab_pipe);
                j.seed = common.seed;
                j.num_seeds = ab_seeds;
                return j;
            }, seed_of(ab));
            const SweepResult r = run_sweep_ablation(job, ab_out, ctx);
            std::cout << r.manifest["results"].dump(2) << std::endl;
        } else if (ev->parsed()) {
            std::cout << run_eval(ev_pred, ev_gt, ev_mn, ev_mm, ev_max, ev_samples, ev_out).dump(2) << std::endl;
        }
    } catch (const ParseError& e) {
        Json extra = Json::object();
        if (e.line()) extra["line"] = e.line();
        if (e.byte_offset()) extra["byte_offset"] = e.byte_offset();
        return report_error(json_errors, e.kind(), e.what(), extra);
    } catch (const Error& e) {
        return report_error(json_errors, e.kind(), e.what());
    } catch (const std::exception& e) {
        return report_error(json_errors, "internal_error", e.what());
    }
    return 0;
}
