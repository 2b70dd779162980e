#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "glyphdiff/oracle.hpp"
#include "glyphdiff/training.hpp"

using namespace glyphdiff;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_model_config() {
    ModelConfig c = default_model_config();
    c.image_size = 32;
    c.patch = 2;
    c.denoiser.latent_hw = 16;
    c.denoiser.latent_c = 12;
    c.denoiser.widths = {8, 16, 32};
    c.denoiser.groups = 4;
    c.denoiser.sin_dim = 16;
    c.denoiser.temb_dim = 32;
    c.denoiser.token_dim = 16;
    c.id_dim = 16;
    c.id_tokens = 4;
    c.prompt_tokens = 2;
    c.id_input = 16;
    c.sched_t = 200;
    return c;
}

Dataset tiny_dataset(int n_scenes, uint64_t seed) {
    Dataset ds;
    ds.meta.world.image_size = 32;
    ds.meta.world.n_identities = 6;
    ds.meta.bank_seed = seed;
    ds.meta.scene_seed = seed + 1;
    ds.meta.size_lo = 0.25;
    ds.meta.size_hi = 0.55;
    ds.meta.n_scenes = n_scenes;
    ds.bank = make_identity_bank(6, seed);
    Rng rng(seed * 77 + 1);
    for (int i = 0; i < n_scenes; ++i)
        ds.scenes.push_back(sample_scene_spec(ds.bank, 32, 0.25, 0.55, rng));
    return ds;
}

TrainedModel tiny_trained_model(uint64_t seed, const Dataset& ds) {
    TrainedModel m;
    m.base.init(tiny_model_config(), seed);
    m.base.set_trainable(false);
    m.init_branches(seed + 1);
    m.data_meta = ds.meta;
    return m;
}

}  // namespace

TEST_CASE("branch training smoke: decreasing loss, frozen base hash") {
    const Dataset ds = tiny_dataset(256, 5);
    TrainedModel model = tiny_trained_model(5, ds);
    const uint64_t hash_before = model.base.weights_hash();

    TrainState state;
    state.cfg.batch_size = 4;
    state.cfg.max_steps = 500;
    state.cfg.lr = 3e-4;
    state.cfg.eval_every = 0;
    state.cfg.seed = 5;
    state.rng.reseed(42);
    BranchTrainer trainer(model, ds, std::move(state));

    std::vector<double> losses;
    for (int i = 0; i < 500; ++i) {
        const StepStats s = trainer.train_step();
        CHECK(s.loss > 0.0);
        losses.push_back(s.loss);
    }
    CHECK(model.base.weights_hash() == hash_before);

    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        return v[v.size() / 2];
    };
    const double first = median({losses.begin(), losses.begin() + 100});
    const double last = median({losses.end() - 100, losses.end()});
    INFO("median first 100: " << first << " median last 100: " << last);
    CHECK(last < first);
}

TEST_CASE("checkpoint: save/load/save byte-identical, resume equivalence, hash guard") {
    const Dataset ds = tiny_dataset(128, 7);
    const std::string dir = (fs::temp_directory_path() / "gd_ckpt_test").string();
    fs::create_directories(dir);
    const std::string p1 = dir + "/a.nt", p2 = dir + "/b.nt", p3 = dir + "/c.nt";

    // straight 12-step run
    TrainedModel model_a = tiny_trained_model(9, ds);
    TrainState st_a;
    st_a.cfg.batch_size = 2;
    st_a.cfg.max_steps = 12;
    st_a.cfg.seed = 9;
    st_a.rng.reseed(123);
    BranchTrainer tr_a(model_a, ds, std::move(st_a));
    std::vector<double> loss_a;
    for (int i = 0; i < 12; ++i) loss_a.push_back(tr_a.train_step().loss);

    // interrupted at 6, checkpointed, resumed
    TrainedModel model_b = tiny_trained_model(9, ds);
    TrainState st_b;
    st_b.cfg.batch_size = 2;
    st_b.cfg.max_steps = 12;
    st_b.cfg.seed = 9;
    st_b.rng.reseed(123);
    BranchTrainer tr_b(model_b, ds, std::move(st_b));
    std::vector<double> loss_b;
    for (int i = 0; i < 6; ++i) loss_b.push_back(tr_b.train_step().loss);
    save_checkpoint(model_b, tr_b.state(), p1);

    LoadedCheckpoint resumed = load_checkpoint(p1);
    CHECK(resumed.state.step == 6);
    BranchTrainer tr_c(resumed.model, ds, std::move(resumed.state));
    for (int i = 0; i < 6; ++i) loss_b.push_back(tr_c.train_step().loss);

    REQUIRE(loss_a.size() == loss_b.size());
    for (size_t i = 0; i < loss_a.size(); ++i) {
        INFO("step " << i);
        CHECK(loss_a[i] == loss_b[i]);  // bitwise replay
    }

    // save -> load -> save produces byte-identical archives
    save_checkpoint(resumed.model, tr_c.state(), p2);
    LoadedCheckpoint again = load_checkpoint(p2);
    save_checkpoint(again.model, again.state, p3);
    auto slurp = [](const std::string& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(f)), {});
    };
    CHECK(slurp(p2) == slurp(p3));

    // mismatched base hash is an explicit error
    CHECK_THROWS_WITH_AS(load_checkpoint(p2, ~model_a.base.weights_hash()),
                         doctest::Contains("hash mismatch"), std::runtime_error);
    fs::remove_all(dir);
}

TEST_CASE("pretrain smoke: held-out loss drops below the initial value") {
    const Dataset ds = tiny_dataset(192, 11);
    BaseModel base;
    base.init(tiny_model_config(), 11);
    PretrainConfig pc;
    pc.batch_size = 4;
    pc.max_steps = 150;
    pc.eval_every = 0;
    pc.seed = 11;
    const PretrainResult r = pretrain_base(base, ds, pc);
    INFO("init " << r.init_val_loss << " final " << r.final_val_loss);
    CHECK(r.final_val_loss < r.init_val_loss);
    // frozen afterwards
    bool any_trainable = false;
    base.visit_params([&](Param& p) { any_trainable |= p.trainable; });
    CHECK(!any_trainable);
}

TEST_CASE("identity oracle: trains to its gates, persists, self-verifies") {
    Dataset ds = tiny_dataset(480, 13);
    OracleConfig cfg;
    cfg.n_classes = 6;
    cfg.input_size = 32;
    cfg.max_steps = 4000;
    cfg.eval_every = 250;
    cfg.seed = 13;
    const OracleModel oracle = train_identity_oracle(ds, cfg);
    CHECK(oracle.heldout_acc >= cfg.acc_gate);
    CHECK(oracle.pose_mae <= cfg.pose_mae_gate);
    CHECK(oracle.expr_mae <= cfg.expr_mae_gate);

    // self-consistency: rendered clean scenes classify to their identity
    int correct = 0;
    const int n_check = 64;
    for (int i = 0; i < n_check; ++i) {
        const RenderResult r = ds.render((size_t)i);
        const OracleEval ev = oracle.evaluate(r.image, ds.scenes[(size_t)i].face_bbox);
        double sum = 0.0;
        for (double p : ev.probs) sum += p;
        CHECK(std::abs(sum - 1.0) < 1e-6);
        int argmax = 0;
        for (size_t c = 1; c < ev.probs.size(); ++c)
            if (ev.probs[c] > ev.probs[(size_t)argmax]) argmax = (int)c;
        correct += argmax == ds.scenes[(size_t)i].identity_id;

        // inference determinism
        const OracleEval ev2 = oracle.evaluate(r.image, ds.scenes[(size_t)i].face_bbox);
        CHECK(ev.probs == ev2.probs);
        CHECK(ev.pose == ev2.pose);
    }
    CHECK((double)correct / n_check >= 0.99);

    // uniform-noise input: no invariant beyond normalization
    Image noise(32, 32);
    Rng nr(14);
    for (auto& v : noise.data) v = (float)nr.uniform();
    const OracleEval nev = oracle.evaluate(noise, RectI{4, 4, 28, 28});
    double sum = 0.0;
    for (double p : nev.probs) sum += p;
    CHECK(std::abs(sum - 1.0) < 1e-6);

    // persistence + load-time gate re-verification on the fixed probe set
    const std::string path = (fs::temp_directory_path() / "gd_oracle_test.nt").string();
    oracle.save(path);
    const OracleModel loaded = OracleModel::load(path, /*verify=*/true);
    CHECK(loaded.heldout_acc == doctest::Approx(oracle.heldout_acc));
    const RenderResult r = ds.render(0);
    const OracleEval e1 = oracle.evaluate(r.image, ds.scenes[0].face_bbox);
    const OracleEval e2 = loaded.evaluate(r.image, ds.scenes[0].face_bbox);
    CHECK(e1.probs == e2.probs);
    fs::remove(path);
    fs::remove(path + ".json");
}

TEST_CASE("identity oracle: per-identity crop precondition") {
    Dataset ds = tiny_dataset(64, 15);  // ~10 crops per identity, below the 50 floor
    OracleConfig cfg;
    cfg.n_classes = 6;
    CHECK_THROWS_WITH_AS(train_identity_oracle(ds, cfg), doctest::Contains("need >= 50"),
                         std::invalid_argument);
}
