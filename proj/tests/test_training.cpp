#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "hetreg/errors.hpp"
#include "hetreg/metrics.hpp"
#include "hetreg/training.hpp"
#include "test_support.hpp"

using namespace hetreg;
using namespace hetreg::train;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_config(Objective obj = Objective::proposed) {
    TrainConfig c;
    c.objective = obj;
    c.warmup_epochs = 1;
    c.main_epochs = 1;
    c.batch_size = 2;
    c.seed = 42;
    c.backbone.enc_widths = {4, 8};
    c.backbone.dec_widths = {8, 4};
    return c;
}

std::vector<synth::ImagePair> tiny_dataset(int n = 4, uint64_t seed = 9,
                                           int64_t size = 16) {
    synth::SynthParams p;
    p.shape = {size, size};
    p.amplitude = 2.0;
    p.smooth_scale = 4.0;
    p.sigma_min = 0.01;
    p.sigma_max = 0.08;
    std::vector<synth::ImagePair> pairs;
    RandomStream root(seed);
    for (int i = 0; i < n; ++i) {
        RandomStream rng = root.fork(static_cast<uint64_t>(i));
        synth::ImagePair pair = synth::generate_pair(p, rng);
        pair.id = "p" + std::to_string(i);
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

fs::path tmp_dir(const std::string& name) {
    fs::path d = fs::temp_directory_path() / "hetreg_tests" / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

}  // namespace

TEST_CASE("epoch_schedule follows the three-phase pattern") {
    TrainConfig c = tiny_config();
    c.warmup_epochs = 1;
    c.main_epochs = 1;
    auto s = epoch_schedule(c);
    REQUIRE(s.size() == 3);
    CHECK((s[0].flag_disp && !s[0].flag_variance));
    CHECK((!s[1].flag_disp && s[1].flag_variance));
    CHECK((s[2].flag_disp && s[2].flag_variance));

    c.warmup_epochs = 0;
    c.main_epochs = 2;
    s = epoch_schedule(c);
    REQUIRE(s.size() == 2);
    for (const auto& f : s) CHECK((f.flag_disp && f.flag_variance));

    c.warmup_epochs = 2;
    c.main_epochs = 3;
    s = epoch_schedule(c);
    REQUIRE(s.size() == 7);
    for (int i = 0; i < 2; ++i) CHECK((s[i].flag_disp && !s[i].flag_variance));
    for (int i = 2; i < 4; ++i) CHECK((!s[i].flag_disp && s[i].flag_variance));
    for (int i = 4; i < 7; ++i) CHECK((s[i].flag_disp && s[i].flag_variance));
}

TEST_CASE("epoch_schedule property sweep over (N_w, N)") {
    for (int nw = 0; nw <= 5; ++nw)
        for (int n = 1; n <= 5; ++n) {
            TrainConfig c = tiny_config();
            c.warmup_epochs = nw;
            c.main_epochs = n;
            auto s = epoch_schedule(c);
            REQUIRE(static_cast<int>(s.size()) == n + 2 * nw);
            for (int i = 0; i < static_cast<int>(s.size()); ++i) {
                const int epoch = i + 1;
                CHECK(s[static_cast<size_t>(i)].epoch_index == epoch);
                const bool want_disp = epoch <= nw || epoch > 2 * nw;
                const bool want_var = epoch > nw;
                CHECK(s[static_cast<size_t>(i)].flag_disp == want_disp);
                CHECK(s[static_cast<size_t>(i)].flag_variance == want_var);
            }
        }
}

TEST_CASE("collaborative branches update only their own estimator") {
    auto pairs = tiny_dataset();
    Trainer t(tiny_config());
    Batch batch = make_batch(pairs, {0, 1});

    const uint64_t theta0 = t.displacement().params().content_hash();
    const uint64_t phi0 = t.variance()->params().content_hash();

    // disp-only branch: phi bit-identical afterwards
    auto reports = t.step_collaborative(batch, {true, false, 1});
    REQUIRE(reports.size() == 1);
    CHECK(reports[0].branch == "disp");
    CHECK(reports[0].used_unit_variance);
    CHECK(t.variance()->params().content_hash() == phi0);
    CHECK(t.displacement().params().content_hash() != theta0);

    // variance-only branch: theta untouched
    const uint64_t theta1 = t.displacement().params().content_hash();
    reports = t.step_collaborative(batch, {false, true, 2});
    REQUIRE(reports.size() == 1);
    CHECK(reports[0].branch == "variance");
    CHECK(t.displacement().params().content_hash() == theta1);
    CHECK(t.variance()->params().content_hash() != phi0);

    // both flags: two reports, prediction used instead of unit variance
    reports = t.step_collaborative(batch, {true, true, 3});
    REQUIRE(reports.size() == 2);
    CHECK_FALSE(reports[0].used_unit_variance);
}

TEST_CASE("unit-variance warm-up weight map equals sigmoid(I_f)") {
    auto pairs = tiny_dataset();
    TrainConfig c = tiny_config();
    c.gamma = 0.5;  // exponent 2*gamma = 1, sigma = 1 -> weight = sigmoid(I_f)
    Trainer t(c);
    Batch batch = make_batch(pairs, {0, 1});
    auto reports = t.step_collaborative(batch, {true, false, 1});

    const Tensor& f = batch.fixed.value();
    double mn = 1e9, mx = -1e9, mean = 0.0;
    for (int64_t i = 0; i < f.size(); ++i) {
        const double w = 1.0 / (1.0 + std::exp(-f[i]));
        mn = std::min(mn, w);
        mx = std::max(mx, w);
        mean += w;
    }
    mean /= static_cast<double>(f.size());
    CHECK(reports[0].weight_mean == doctest::Approx(mean).epsilon(1e-12));
    CHECK(reports[0].weight_min == doctest::Approx(mn).epsilon(1e-12));
    CHECK(reports[0].weight_max == doctest::Approx(mx).epsilon(1e-12));
}

TEST_CASE("training runs are deterministic given the seed") {
    auto pairs = tiny_dataset();
    const auto d1 = tmp_dir("det1");
    const auto d2 = tmp_dir("det2");

    Trainer a(tiny_config());
    a.run(pairs, d1.string());
    Trainer b(tiny_config());
    b.run(pairs, d2.string());

    CHECK(a.displacement().params().content_hash() ==
          b.displacement().params().content_hash());
    CHECK(a.variance()->params().content_hash() == b.variance()->params().content_hash());
    CHECK(read_file((d1 / "loss.csv").string()) == read_file((d2 / "loss.csv").string()));
    CHECK(read_file((d1 / "checkpoint.zip").string()) ==
          read_file((d2 / "checkpoint.zip").string()));
}

TEST_CASE("mse objective constructs no variance estimator") {
    auto pairs = tiny_dataset();
    Trainer t(tiny_config(Objective::mse));
    CHECK(t.variance() == nullptr);
    const auto dir = tmp_dir("mse");
    t.run(pairs, dir.string());

    Trainer loaded = Trainer::from_checkpoint((dir / "checkpoint.zip").string());
    CHECK(loaded.variance() == nullptr);
}

TEST_CASE("nll updates both estimators in one step") {
    auto pairs = tiny_dataset();
    Trainer t(tiny_config(Objective::nll));
    REQUIRE(t.variance() != nullptr);
    const uint64_t theta0 = t.displacement().params().content_hash();
    const uint64_t phi0 = t.variance()->params().content_hash();
    Batch batch = make_batch(pairs, {0, 1});
    StepReport r = t.step_baseline(batch);
    CHECK(r.branch == "joint");
    CHECK(t.displacement().params().content_hash() != theta0);
    CHECK(t.variance()->params().content_hash() != phi0);
}

TEST_CASE("beta-nll at beta 0 takes the same first step as nll") {
    auto pairs = tiny_dataset();
    TrainConfig cn = tiny_config(Objective::nll);
    TrainConfig cb = tiny_config(Objective::beta_nll);
    cb.beta = 0.0;
    Trainer tn(cn), tb(cb);
    Batch batch = make_batch(pairs, {0, 1});
    tn.step_baseline(batch);
    tb.step_baseline(batch);
    CHECK(tn.displacement().params().content_hash() ==
          tb.displacement().params().content_hash());
    CHECK(tn.variance()->params().content_hash() == tb.variance()->params().content_hash());
}

TEST_CASE("adareg trains without a variance estimator") {
    auto pairs = tiny_dataset();
    Trainer t(tiny_config(Objective::adareg));
    CHECK(t.variance() == nullptr);
    Batch batch = make_batch(pairs, {0, 1, 2});
    StepReport r = t.step_baseline(batch);
    CHECK(std::isfinite(r.total));
}

TEST_CASE("checkpoint save/load round-trips bit-exactly") {
    auto pairs = tiny_dataset();
    Trainer t(tiny_config());
    Batch batch = make_batch(pairs, {0, 1});
    t.step_collaborative(batch, {true, true, 1});

    const auto dir = tmp_dir("ckpt");
    const std::string path = (dir / "c.zip").string();
    t.save_checkpoint(path);

    Trainer loaded = Trainer::from_checkpoint(path);
    CHECK(loaded.displacement().params().content_hash() ==
          t.displacement().params().content_hash());
    CHECK(loaded.variance()->params().content_hash() == t.variance()->params().content_hash());
    CHECK(loaded.global_step() == t.global_step());

    // optimizer moments restored exactly
    const auto& p0 = t.displacement().params().all()[0];
    const auto& l0 = loaded.displacement().params().all()[0];
    REQUIRE(p0.adam_m.size() == l0.adam_m.size());
    for (size_t i = 0; i < p0.adam_m.size(); ++i) {
        CHECK(p0.adam_m[i] == l0.adam_m[i]);
        CHECK(p0.adam_v[i] == l0.adam_v[i]);
    }
}

TEST_CASE("loading a checkpoint with a different backbone fails without partial load") {
    auto pairs = tiny_dataset();
    Trainer t(tiny_config());
    const auto dir = tmp_dir("ckpt_mismatch");
    const std::string path = (dir / "c.zip").string();
    t.save_checkpoint(path);

    TrainConfig other = tiny_config();
    other.backbone.enc_widths = {8, 8};
    other.backbone.dec_widths = {8, 8};
    Trainer t2(other);
    const uint64_t before = t2.displacement().params().content_hash();
    CHECK_THROWS_AS(t2.load_checkpoint(path), ConfigError);
    CHECK(t2.displacement().params().content_hash() == before);
}

TEST_CASE("resume from checkpoint continues the schedule and matches a straight run") {
    auto pairs = tiny_dataset();

    // short run writes a checkpoint at its last epoch
    TrainConfig short_cfg = tiny_config();
    short_cfg.warmup_epochs = 1;
    short_cfg.main_epochs = 1;  // epochs 1..3
    const auto ds = tmp_dir("resume_short");
    Trainer a(short_cfg);
    a.run(pairs, ds.string());
    CHECK(a.completed_epochs() == 3);

    // extended schedule shares the first three epochs
    TrainConfig long_cfg = short_cfg;
    long_cfg.main_epochs = 3;  // epochs 1..5

    Trainer resumed(long_cfg);
    resumed.load_checkpoint((ds / "checkpoint.zip").string());
    CHECK(resumed.completed_epochs() == 3);
    const auto dr = tmp_dir("resume_rest");
    resumed.run(pairs, dr.string());
    CHECK(resumed.completed_epochs() == 5);

    const auto df = tmp_dir("resume_full");
    Trainer full(long_cfg);
    full.run(pairs, df.string());

    CHECK(resumed.displacement().params().content_hash() ==
          full.displacement().params().content_hash());
    CHECK(resumed.variance()->params().content_hash() ==
          full.variance()->params().content_hash());
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
    auto pairs = tiny_dataset();
    Trainer t(tiny_config(Objective::nll));
    // poison the variance head so the log-variance (and hence the loss) is NaN
    // while the displacement itself stays finite
    t.variance()->params().at("var.head.b").value[0] =
        std::numeric_limits<float>::quiet_NaN();
    Batch batch = make_batch(pairs, {0, 1});
    CHECK_THROWS_WITH_AS(t.step_baseline(batch), doctest::Contains("non-finite"),
                         std::runtime_error);
}

TEST_CASE("adam first step descends and decreases a quadratic") {
    // single scalar parameter, loss (p - 3)^2
    models::ParamStore store;
    store.add("p", {1});
    AdamOptimizer opt(1e-2);
    const auto loss_of = [&]() {
        auto bound = store.bind();
        Var l = square(add_scalar(bound[0], -3.0));
        return std::make_pair(l, bound);
    };
    auto [l0, bound0] = loss_of();
    const double before = l0.item();
    l0.backward();
    const double g = bound0[0].grad()[0];
    CHECK(g < 0.0);  // d(p-3)^2/dp at p=0 is -6
    opt.step(store, bound0);
    CHECK(store.all()[0].value[0] > 0.0f);  // moved against the gradient
    CHECK(loss_of().first.item() < before);
}

TEST_CASE("train config validation rejects bad values") {
    TrainConfig c = tiny_config();
    c.gamma = -0.1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.beta = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.main_epochs = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.eta = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("training reduces endpoint error on a small synthetic task") {
    synth::SynthParams sp;
    sp.shape = {24, 24};
    sp.amplitude = 5.0;
    sp.smooth_scale = 6.0;
    sp.sigma_min = 0.01;
    sp.sigma_max = 0.05;
    std::vector<synth::ImagePair> pairs;
    RandomStream root(71);
    for (int i = 0; i < 10; ++i) {
        RandomStream rng = root.fork(static_cast<uint64_t>(i));
        auto p = synth::generate_pair(sp, rng);
        p.id = "t" + std::to_string(i);
        pairs.push_back(std::move(p));
    }
    TrainConfig c = tiny_config(Objective::proposed);
    c.backbone.enc_widths = {8, 16};
    c.backbone.dec_widths = {16, 8};
    c.backbone.head_gain = 20.0;
    c.warmup_epochs = 5;
    c.main_epochs = 30;
    c.batch_size = 1;
    c.seed = 5;

    Trainer t(c);
    const auto epe_now = [&]() {
        double e = 0.0;
        for (const auto& p : pairs)
            e += metrics::endpoint_error(t.predict_displacement(p), *p.gt_displacement,
                                         &*p.fixed_mask);
        return e / static_cast<double>(pairs.size());
    };
    const double epe0 = epe_now();
    const auto dir = tmp_dir("progress");
    t.run(pairs, dir.string());
    CHECK(epe_now() < epe0);
}

TEST_CASE("loss log has one record per step and branch") {
    auto pairs = tiny_dataset();
    TrainConfig c = tiny_config();
    c.warmup_epochs = 1;
    c.main_epochs = 2;  // 4 epochs: disp-only, var-only, both, both
    const auto dir = tmp_dir("log");
    Trainer t(c);
    t.run(pairs, dir.string());

    std::ifstream in((dir / "loss.csv").string());
    std::string line;
    std::getline(in, line);
    CHECK(line == "step,epoch,branch,total,data,smooth,varpen");
    int rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    // 2 batches/epoch; epochs 1,2 produce 1 row per step, epochs 3,4 produce 2
    CHECK(rows == 2 * (1 + 1 + 2 + 2));
}
