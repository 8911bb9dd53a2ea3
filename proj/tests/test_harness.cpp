#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "syncdiff/harness.hpp"
#include "test_support.hpp"

using namespace syncdiff;

namespace {

/// Fresh scratch directory, removed afterwards.
struct TempDir {
    fs::path path;
    TempDir() {
        std::random_device rd;
        path = fs::temp_directory_path() / ("syncdiff_test_" + hex64((std::uint64_t(rd()) << 32) ^ rd()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

std::string slurp(const fs::path& p) { return detail::slurp(p); }

Job small_match_job() {
    Job job;
    job.command = "match";
    SyntheticPairSpec s;
    s.kind = PairKind::isometric_bend;
    s.resolution = 10;
    job.input.synthetic = s;
    job.pipeline.k = 16;
    job.pipeline.descriptor_dim = 32;
    job.pipeline.energy.h = 12;
    job.pipeline.optim.max_iters = 3;
    job.pipeline.optim.parametrisation = Parametrisation::direct_scores;
    job.seed = 4;
    return job;
}

} // namespace

// --- spectral cache ----------------------------------------------------------

TEST(SpectralCache, RoundTripIsExact) {
    TempDir dir;
    const TriangleMesh m = fixtures::jittered_sphere(2, 0.05, 3);
    CacheOutcome first, second;
    const Shape a = prepare_shape_cached(m, 20, dir.path, "s", &first);
    EXPECT_EQ(first.status, CacheStatus::miss);
    const Shape b = prepare_shape_cached(m, 20, dir.path, "s", &second);
    EXPECT_EQ(second.status, CacheStatus::hit);
    EXPECT_LE((a.basis.eigenvalues - b.basis.eigenvalues).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((a.basis.eigenvectors - b.basis.eigenvectors).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((a.basis.mass - b.basis.mass).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((a.basis.residuals - b.basis.residuals).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SpectralCache, DifferentMeshUnderSameKeyIsStale) {
    TempDir dir;
    prepare_shape_cached(fixtures::jittered_sphere(2, 0.05, 3), 12, dir.path, "s");
    CacheOutcome out;
    const TriangleMesh other = fixtures::jittered_sphere(2, 0.05, 4);
    const Shape s = prepare_shape_cached(other, 12, dir.path, "s", &out);
    EXPECT_EQ(out.status, CacheStatus::stale);
    // the rewritten entry now matches the new mesh
    prepare_shape_cached(other, 12, dir.path, "s", &out);
    EXPECT_EQ(out.status, CacheStatus::hit);
    EXPECT_EQ(s.size(), other.num_vertices());
}

TEST(SpectralCache, CorruptEntriesAreRecomputed) {
    TempDir dir;
    const TriangleMesh m = fixtures::jittered_sphere(2, 0.05, 3);
    const Shape ref = prepare_shape_cached(m, 12, dir.path, "s");
    const fs::path stem = cache_stem(dir.path, "s", 12);

    // flipped byte in the blob
    {
        std::string blob = slurp(stem.string() + ".bin");
        blob[blob.size() / 2] ^= 0x5a;
        std::ofstream(stem.string() + ".bin", std::ios::binary) << blob;
    }
    CacheOutcome out;
    Shape s = prepare_shape_cached(m, 12, dir.path, "s", &out);
    EXPECT_EQ(out.status, CacheStatus::corrupt);
    EXPECT_LE((s.basis.eigenvalues - ref.basis.eigenvalues).cwiseAbs().maxCoeff(), 1e-12);

    // unparsable sidecar
    std::ofstream(stem.string() + ".json") << "{not json";
    s = prepare_shape_cached(m, 12, dir.path, "s", &out);
    EXPECT_EQ(out.status, CacheStatus::corrupt);
    EXPECT_FALSE(out.detail.empty());

    // truncated blob with a sidecar that still vouches for it
    prepare_shape_cached(m, 12, dir.path, "s", &out);
    ASSERT_EQ(out.status, CacheStatus::hit);
    fs::resize_file(stem.string() + ".bin", 40);
    s = prepare_shape_cached(m, 12, dir.path, "s", &out);
    EXPECT_EQ(out.status, CacheStatus::corrupt);

    prepare_shape_cached(m, 12, dir.path, "s", &out);
    EXPECT_EQ(out.status, CacheStatus::hit);
}

TEST(SpectralCache, EmptyDirectoryDisablesCaching) {
    CacheOutcome out;
    prepare_shape_cached(fixtures::jittered_sphere(1, 0.05, 3), 8, {}, "s", &out);
    EXPECT_EQ(out.status, CacheStatus::disabled);
}

TEST(SpectralCache, BlobEncodingIsLittleEndian) {
    SpectralBasis b;
    b.eigenvalues = Eigen::VectorXd::Constant(1, 1.0);
    b.eigenvectors = Eigen::MatrixXd::Constant(2, 1, 0.5);
    b.mass = Eigen::VectorXd::Constant(2, 0.25);
    const std::string blob = detail::encode_basis(b);
    ASSERT_EQ(blob.size(), 16u + 8u * (1 + 2 + 2));
    EXPECT_EQ(static_cast<unsigned char>(blob[0]), 2u);  // n, low byte first
    EXPECT_EQ(static_cast<unsigned char>(blob[8]), 1u);  // k
    EXPECT_EQ(static_cast<unsigned char>(blob[16 + 7]), 0x3fu);  // 1.0 = 0x3ff0000000000000
    const SpectralBasis d = detail::decode_basis(blob);
    EXPECT_EQ(d.eigenvectors, b.eigenvectors);
    EXPECT_EQ(d.mass, b.mass);
}

// --- configuration JSON ------------------------------------------------------

TEST(Report, PipelineConfigRoundTrips) {
    PipelineConfig c;
    c.k = 33;
    c.descriptor = DescriptorKind::hks;
    c.standardise = false;
    c.mode = MatchMode::fmap;
    c.decoder = Decoder::fmap_nn;
    c.energy.T = 1e-4;
    c.energy.tau = 0.123456789012345;
    c.energy.fixed_time = 5e-5;
    c.energy.regulariser = Regulariser::cycle;
    c.energy.projection = Projection::literal;
    c.optim.parametrisation = Parametrisation::direct_scores;
    c.optim.resample_each_iter = true;
    const Json j = to_json(c);
    const PipelineConfig d = pipeline_from_json(j);
    EXPECT_EQ(to_json(d).dump(), j.dump());
    EXPECT_EQ(d.energy.tau, c.energy.tau);
    ASSERT_TRUE(d.energy.fixed_time);
    EXPECT_EQ(*d.energy.fixed_time, 5e-5);
}

TEST(Report, UnknownKeysAndBadEnumsAreRejected) {
    Json j = to_json(PipelineConfig{});
    j["energy"]["lambda_smooth"] = 1.0;
    EXPECT_THROW(pipeline_from_json(j), ConfigError);
    j = to_json(PipelineConfig{});
    j["mode"] = "magic";
    EXPECT_THROW(pipeline_from_json(j), ConfigError);
    j = to_json(PipelineConfig{});
    j["k"] = "sixty-four";
    EXPECT_THROW(pipeline_from_json(j), ConfigError);
    j = to_json(PipelineConfig{});
    j["energy"]["fixed_time"] = "soon";
    EXPECT_THROW(pipeline_from_json(j), ConfigError);
}

TEST(Report, MissingKeysKeepDefaults) {
    const PipelineConfig d = pipeline_from_json(Json{{"k", 12}});
    EXPECT_EQ(d.k, 12);
    EXPECT_EQ(d.energy.T, EnergyConfig{}.T);
    EXPECT_EQ(d.optim.max_iters, OptimConfig{}.max_iters);
}

TEST(Report, DoublesRoundTripThroughText) {
    for (double x : {0.1, 1e-4, 1.0 / 3.0, 6.02214076e23, -2.5e-300}) EXPECT_EQ(std::stod(fmt_double(x)), x);
}

TEST(Report, CsvHeaders) {
    Metrics m;
    m.thresholds = {0.0, 0.05};
    m.pck = {0.5, 1.0};
    EXPECT_EQ(pck_csv(m), "threshold,pck\n0,0.5\n0.050000000000000003,1\n");
    std::vector<TraceRow> t(1);
    EXPECT_EQ(trace_csv(t).substr(0, trace_csv(t).find('\n')), "iter,l_diff,l_couple,l_struct,l_total,step_size");
}

// --- harness -----------------------------------------------------------------

TEST(Harness, ManifestRoundTripsTheJob) {
    Job job = small_match_job();
    job.command = "sweep-time";
    job.T_list = {1.0, 1e-3};
    job.num_seeds = 3;
    const Json m = manifest_json(job, Json::array(), Json::array());
    const Job back = job_from_manifest(m);
    EXPECT_EQ(job_json(back).dump(), job_json(job).dump());

    Json bad = m;
    bad["job"]["colour"] = "blue";
    EXPECT_THROW(job_from_manifest(bad), ConfigError);
    bad = m;
    bad["schema_version"] = 99;
    EXPECT_THROW(job_from_manifest(bad), ConfigError);
}

TEST(Harness, MatchReplayIsByteIdentical) {
    TempDir dir;
    RunContext ctx;
    ctx.cache_dir = dir.path / "cache";
    const Job job = small_match_job();
    run_match(job, dir.path / "a", ctx);
    const Job replay = job_from_manifest(read_json_file(dir.path / "a" / "manifest.json"));
    run_match(replay, dir.path / "b", ctx);
    for (const char* f : {"map_MN.txt", "map_NM.txt", "metrics.json", "pck.csv", "trace.csv", "energy.json", "manifest.json"}) {
        ASSERT_TRUE(fs::exists(dir.path / "a" / f)) << f;
        EXPECT_EQ(slurp(dir.path / "a" / f), slurp(dir.path / "b" / f)) << f;
    }
}

TEST(Harness, CacheDoesNotChangeResults) {
    TempDir dir;
    RunContext cached, uncached;
    cached.cache_dir = dir.path / "cache";
    const Job job = small_match_job();
    run_match(job, dir.path / "warm", cached);
    run_match(job, dir.path / "hit", cached);
    run_match(job, dir.path / "none", uncached);
    EXPECT_EQ(slurp(dir.path / "hit" / "map_MN.txt"), slurp(dir.path / "none" / "map_MN.txt"));
    EXPECT_EQ(slurp(dir.path / "hit" / "metrics.json"), slurp(dir.path / "none" / "metrics.json"));
    const Json m = read_json_file(dir.path / "hit" / "manifest.json");
    ASSERT_EQ(m["cache"].size(), 2u);
    // hit or miss is logged, not recorded, so a replay against a warm cache stays byte-identical
    EXPECT_FALSE(m["cache"][0].contains("status"));
    EXPECT_EQ(m["cache"][0]["key"], "synthetic_isometric_bend_cylinder_r10_s4_M");
}

TEST(Harness, GenerateThenMatchFilesRecoversPermutation) {
    TempDir dir;
    Job gen;
    gen.command = "generate";
    SyntheticPairSpec s;
    s.kind = PairKind::permuted;
    s.resolution = 12;
    gen.input.synthetic = s;
    run_generate(gen, dir.path / "pair");

    Job job;
    job.command = "match";
    job.input.mesh_M = (dir.path / "pair" / "M.off").string();
    job.input.mesh_N = (dir.path / "pair" / "N.off").string();
    job.input.gt = (dir.path / "pair" / "gt.txt").string();
    job.pipeline.mode = MatchMode::descriptor_nn;
    const Json m = run_match(job, dir.path / "out", RunContext{});
    EXPECT_EQ(m["results"][0]["metrics"]["auc"].get<double>(), 1.0);

    const Json e = run_eval(dir.path / "out" / "map_MN.txt", job.input.gt, job.input.mesh_N, job.input.mesh_M, 0.1, 11,
                            dir.path / "eval");
    EXPECT_EQ(e["metrics"]["mean_geo_error_x100"].get<double>(), 0.0);
    EXPECT_TRUE(fs::exists(dir.path / "eval" / "pck.csv"));
}

TEST(Harness, SweepsWriteOneRowPerSetting) {
    TempDir dir;
    Job job = small_match_job();
    job.command = "sweep-ablation";
    job.num_seeds = 2;
    job.pipeline.optim.max_iters = 1;
    const SweepResult ab = run_sweep_ablation(job, dir.path / "ab", RunContext{});
    EXPECT_EQ(ab.summary.size(), 7u);
    EXPECT_EQ(ab.cells.size(), 14u);

    job.command = "sweep-time";
    job.T_list = {1e-2, 1e-3, 1e-4};
    RunContext two;
    two.jobs = 2;
    const SweepResult st = run_sweep_time(job, dir.path / "st", two);
    EXPECT_EQ(st.summary.size(), 3u);
    const std::string csv = slurp(dir.path / "st" / "sweep_time.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
    EXPECT_EQ(csv.rfind("T,mean_geo_error_x100,auc,smoothness,coverage,num_seeds\n", 0), 0u);

    // parallel and serial runs agree
    const SweepResult st1 = run_sweep_time(job, dir.path / "st1", RunContext{});
    EXPECT_EQ(slurp(dir.path / "st1" / "sweep_time.csv"), csv);
}

TEST(Harness, InvalidMeshFilesAreRejected) {
    TempDir dir;
    std::ofstream(dir.path / "bad.off") << "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 7\n";
    EXPECT_ANY_THROW(load_for_matching(dir.path / "bad.off"));
}
