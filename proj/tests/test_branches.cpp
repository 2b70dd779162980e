#include <doctest.h>

#include "glyphdiff/branches.hpp"
#include "glyphdiff/hash.hpp"
#include "test_util.hpp"

using namespace glyphdiff;

namespace {

DenoiserConfig small_cfg() {
    DenoiserConfig c;
    c.latent_hw = 16;
    c.latent_c = 12;
    c.widths = {8, 16, 32};
    c.groups = 4;
    c.token_dim = 16;
    c.sin_dim = 16;
    c.temb_dim = 32;
    return c;
}

template <typename S>
uint64_t trunk_hash(ControlBranchT<S>& b) {
    Fnv1a64 h;
    auto upd = [&](ParamT<S>& p) { h.update_tensor(p.value); };
    b.conv_in.visit(upd);
    b.temb1.visit(upd);
    b.temb2.visit(upd);
    b.e00.visit(upd); b.e01.visit(upd); b.down0.visit(upd);
    b.e10.visit(upd); b.ea10.visit(upd); b.e11.visit(upd); b.ea11.visit(upd);
    b.down1.visit(upd);
    b.e20.visit(upd); b.ea20.visit(upd); b.e21.visit(upd); b.ea21.visit(upd);
    b.m1.visit(upd); b.ma.visit(upd); b.m2.visit(upd);
    return h.digest();
}

template <typename S>
uint64_t base_trunk_hash(UNetT<S>& u) {
    Fnv1a64 h;
    auto upd = [&](ParamT<S>& p) { h.update_tensor(p.value); };
    u.conv_in.visit(upd);
    u.temb1.visit(upd);
    u.temb2.visit(upd);
    u.e00.visit(upd); u.e01.visit(upd); u.down0.visit(upd);
    u.e10.visit(upd); u.ea10.visit(upd); u.e11.visit(upd); u.ea11.visit(upd);
    u.down1.visit(upd);
    u.e20.visit(upd); u.ea20.visit(upd); u.e21.visit(upd); u.ea21.visit(upd);
    u.m1.visit(upd); u.ma.visit(upd); u.m2.visit(upd);
    return h.digest();
}

}  // namespace

TEST_CASE("init_branch: zero convolutions exactly zero, trunk copies base bitwise") {
    const DenoiserConfig cfg = small_cfg();
    Rng rng(5);
    UNet base;
    base.init("base.unet", cfg, rng);

    Rng brng(6);
    ControlBranch branch;
    branch.init("branch.local", base, 4, brng);

    for (float v : branch.stem.w.value.data) CHECK(v == 0.0f);
    for (float v : branch.stem.b.value.data) CHECK(v == 0.0f);
    for (const auto& proj : branch.out_proj) {
        for (float v : proj.w.value.data) CHECK(v == 0.0f);
        for (float v : proj.b.value.data) CHECK(v == 0.0f);
    }
    CHECK(trunk_hash(branch) == base_trunk_hash(base));

    Rng brng2(6);
    ControlBranch branch2;
    branch2.init("branch.local", base, 4, brng2);
    bool identical = true;
    branch.visit([&](Param& p) {
        // pair-wise compare by name against branch2
        branch2.visit([&](Param& q) {
            if (q.name == p.name) identical &= q.value.data == p.value.data;
        });
    });
    CHECK(identical);
}

TEST_CASE("crop_upsample_latent: identity, constants, bilinear oracle") {
    Tape tp;
    tp.grad_enabled = false;
    Rng rng(7);
    Tensor z({1, 8, 8, 3});
    rng.fill_normal(z);
    Var zv = tp.leaf(z);

    // full-grid rect is a bitwise identity
    Var full = op_crop_bilinear_up(tp, zv, {RectI{0, 0, 8, 8}}, 8, 8);
    CHECK(tp.val(full).data == z.data);

    // constant crop stays constant
    Tensor c = Tensor::full({1, 8, 8, 2}, 0.731f);
    Var cv = tp.leaf(c);
    Var cu = op_crop_bilinear_up(tp, cv, {RectI{2, 3, 4, 5}}, 8, 8);
    for (float v : tp.val(cu).data) CHECK(v == doctest::Approx(0.731f).epsilon(1e-6));

    // 2x2 -> 4x4 against the direct bilinear formula, frozen expected values
    Tensor small({1, 2, 2, 1}, std::vector<float>{0, 1, 2, 3});
    Var sv = tp.leaf(small);
    Var up = op_crop_bilinear_up(tp, sv, {RectI{0, 0, 2, 2}}, 4, 4);
    const std::vector<float> frozen = {0.0f, 0.25f, 0.75f, 1.0f, 0.5f, 0.75f, 1.25f, 1.5f,
                                       1.5f, 1.75f, 2.25f, 2.5f, 2.0f, 2.25f, 2.75f, 3.0f};
    for (size_t i = 0; i < frozen.size(); ++i)
        CHECK(tp.val(up)[(int64_t)i] == doctest::Approx(frozen[i]).epsilon(1e-6));
    const auto oracle = testutil::bilinear_crop_oracle(small, RectI{0, 0, 2, 2}, 4, 4);
    for (int64_t i = 0; i < oracle.numel(); ++i)
        CHECK(std::abs(tp.val(up)[i] - oracle[i]) < 1e-6f);

    // random crops vs oracle
    for (int trial = 0; trial < 50; ++trial) {
        Tensor grid({1, 12, 12, 3});
        rng.fill_normal(grid);
        const int w = 1 + (int)rng.uniform_int(12);
        const int h = 1 + (int)rng.uniform_int(12);
        const int x0 = (int)rng.uniform_int(12 - w + 1);
        const int y0 = (int)rng.uniform_int(12 - h + 1);
        const RectI r{x0, y0, x0 + w, y0 + h};
        Tape t2;
        t2.grad_enabled = false;
        Var gv = t2.leaf(grid);
        Var out = op_crop_bilinear_up(t2, gv, {r}, 12, 12);
        const auto want = testutil::bilinear_crop_oracle(grid, r, 12, 12);
        for (int64_t i = 0; i < want.numel(); ++i)
            CHECK(std::abs(t2.val(out)[i] - want[i]) < 1e-6f);
    }

    CHECK_THROWS_AS(op_crop_bilinear_up(tp, zv, {RectI{0, 0, 0, 4}}, 8, 8),
                    std::invalid_argument);
}

TEST_CASE("relocate: identity, handmade case, support, area-pool oracle") {
    Tape tp;
    tp.grad_enabled = false;
    Rng rng(8);

    // full-grid rect is a bitwise identity
    Tensor z({1, 6, 6, 2});
    rng.fill_normal(z);
    Var zv = tp.leaf(z);
    Var full = op_relocate(tp, zv, {RectI{0, 0, 6, 6}});
    CHECK(tp.val(full).data == z.data);

    // 4x4 ones pooled into a 2x2 rect at the origin
    Tensor ones = Tensor::full({1, 4, 4, 1}, 1.0f);
    Var ov = tp.leaf(ones);
    Var out = op_relocate(tp, ov, {RectI{0, 0, 2, 2}});
    const auto& o = tp.val(out);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            const float v = o[(int64_t)y * 4 + x];
            if (x < 2 && y < 2) CHECK(v == doctest::Approx(1.0f));
            else CHECK(v == 0.0f);
        }

    // random grids: exact zero outside, oracle match inside, energy identity
    for (int trial = 0; trial < 200; ++trial) {
        const int hw = 4 + (int)rng.uniform_int(9);
        Tensor grid({1, hw, hw, 2});
        rng.fill_normal(grid);
        const int rw = 1 + (int)rng.uniform_int(hw);
        const int rh = 1 + (int)rng.uniform_int(hw);
        const int rx = (int)rng.uniform_int(hw - rw + 1);
        const int ry = (int)rng.uniform_int(hw - rh + 1);
        const RectI rect{rx, ry, rx + rw, ry + rh};
        Tape t2;
        t2.grad_enabled = false;
        Var gv = t2.leaf(grid);
        Var rv = op_relocate(t2, gv, {rect});
        const auto& res = t2.val(rv);
        const auto pooled = testutil::area_pool_oracle(grid, rh, rw);
        for (int y = 0; y < hw; ++y)
            for (int x = 0; x < hw; ++x)
                for (int c = 0; c < 2; ++c) {
                    const float v = res[((int64_t)y * hw + x) * 2 + c];
                    if (x >= rect.x0 && x < rect.x1 && y >= rect.y0 && y < rect.y1) {
                        const float want =
                            pooled[((int64_t)(y - rect.y0) * rw + (x - rect.x0)) * 2 + c];
                        CHECK(std::abs(v - want) < 1e-5f);
                    } else {
                        CHECK(v == 0.0f);
                    }
                }
    }
}

TEST_CASE("branch forwards: zero-init transparency and relocation support") {
    const DenoiserConfig cfg = small_cfg();
    Rng rng(9);
    UNet base;
    base.init("base.unet", cfg, rng);
    ControlBranch local, global_b;
    local.init("branch.local", base, 4, rng);
    global_b.init("branch.global", base, 1, rng);

    Tape tp;
    tp.grad_enabled = false;
    Tensor z({2, cfg.latent_hw, cfg.latent_hw, cfg.latent_c});
    rng.fill_normal(z);
    Tensor pe({2, cfg.latent_hw, cfg.latent_hw, 4});
    rng.fill_normal(pe);
    Tensor loc({2, cfg.latent_hw, cfg.latent_hw, 1});
    Tensor tokens({2, 5, cfg.token_dim});
    rng.fill_normal(tokens);
    const std::vector<RectI> sq = {RectI{4, 4, 20, 20}, RectI{0, 8, 14, 22}};

    Var zv = tp.leaf(z), pev = tp.leaf(pe), locv = tp.leaf(loc), tok = tp.leaf(tokens);
    const auto lsites = local_branch_forward(tp, local, zv, pev, tok, {10, 700}, sq, 32);
    const auto gsites = global_branch_forward(tp, global_b, zv, locv, tok, {10, 700});
    REQUIRE(lsites.size() == 7);
    REQUIRE(gsites.size() == 7);
    const auto specs = injection_sites(cfg);
    for (size_t i = 0; i < 7; ++i) {
        for (float v : tp.val(lsites[i]).data) CHECK(v == 0.0f);
        for (float v : tp.val(gsites[i]).data) CHECK(v == 0.0f);
        CHECK(tp.val(gsites[i]).shape ==
              std::vector<int>{2, specs[i].hw, specs[i].hw, specs[i].channels});
    }

    // randomize output projections: support contract must still hold
    Rng wrng(10);
    for (auto& proj : local.out_proj) wrng.fill_normal(proj.w.value, 0.3);
    wrng.fill_normal(local.stem.w.value, 0.3);
    Tape t2;
    t2.grad_enabled = false;
    Var zv2 = t2.leaf(z), pev2 = t2.leaf(pe), tok2 = t2.leaf(tokens);
    const auto lsites2 = local_branch_forward(t2, local, zv2, pev2, tok2, {10, 700}, sq, 32);
    for (size_t i = 0; i < 7; ++i) {
        const auto& val = t2.val(lsites2[i]);
        const int hw = specs[i].hw, c = specs[i].channels;
        bool any_nonzero = false;
        for (int n = 0; n < 2; ++n) {
            const RectI rect = scale_rect_outward(sq[(size_t)n], 32, hw);
            for (int y = 0; y < hw; ++y)
                for (int x = 0; x < hw; ++x)
                    for (int q = 0; q < c; ++q) {
                        const float v = val[((((int64_t)n * hw) + y) * hw + x) * c + q];
                        const bool inside = x >= rect.x0 && x < rect.x1 && y >= rect.y0 &&
                                            y < rect.y1;
                        if (!inside) CHECK(v == 0.0f);
                        else any_nonzero |= v != 0.0f;
                    }
        }
        CHECK(any_nonzero);
    }
}

TEST_CASE("local branch: crop removes location (translation invariance of the input)") {
    Tape tp;
    tp.grad_enabled = false;
    Rng rng(11);
    // same face content pasted at two different positions
    Tensor patch({1, 6, 6, 3});
    rng.fill_normal(patch);
    auto paste = [&](int ox, int oy) {
        Tensor z({1, 16, 16, 3});
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 6; ++x)
                for (int c = 0; c < 3; ++c)
                    z[(((int64_t)(oy + y)) * 16 + (ox + x)) * 3 + c] =
                        patch[((int64_t)y * 6 + x) * 3 + c];
        return z;
    };
    Var a = tp.leaf(paste(2, 3));
    Var b = tp.leaf(paste(9, 7));
    Var ca = crop_upsample_latent(tp, a, {RectI{2, 3, 8, 9}});
    Var cb = crop_upsample_latent(tp, b, {RectI{9, 7, 15, 13}});
    CHECK(tp.val(ca).data == tp.val(cb).data);
}

TEST_CASE("local branch: gradient w.r.t. the pose-expression condition (finite differences)") {
    DenoiserConfig cfg = small_cfg();
    Rng rng(12);
    UNetT<double> base;
    base.init("b", cfg, rng);
    ControlBranchT<double> branch;
    branch.init("br", base, 4, rng);
    // non-zero stems and projections so the gradient path is live
    rng.fill_normal(branch.stem.w.value, 0.2);
    for (auto& proj : branch.out_proj) rng.fill_normal(proj.w.value, 0.2);

    TensorT<double> z({1, cfg.latent_hw, cfg.latent_hw, cfg.latent_c});
    rng.fill_normal(z);
    TensorT<double> pe({1, cfg.latent_hw, cfg.latent_hw, 4});
    rng.fill_normal(pe, 0.5);
    TensorT<double> tokens({1, 3, cfg.token_dim});
    rng.fill_normal(tokens);
    const std::vector<RectI> sq = {RectI{6, 4, 22, 20}};
    const auto specs = injection_sites(cfg);
    std::vector<TensorT<double>> readouts;
    for (const auto& s : specs) {
        TensorT<double> r({1, s.hw, s.hw, s.channels});
        rng.fill_normal(r, 0.3);
        readouts.push_back(std::move(r));
    }

    auto run = [&](const TensorT<double>& pe_in, TapeT<double>& tp, bool grads, Var* pe_var) {
        tp.grad_enabled = grads;
        Var zv = tp.leaf(z);
        Var pev = tp.leaf(pe_in, grads);
        Var tok = tp.leaf(tokens);
        auto sites = local_branch_forward(tp, branch, zv, pev, tok, {321}, sq, 32);
        Var acc = op_dot_readout(tp, sites[0], readouts[0]);
        for (size_t i = 1; i < sites.size(); ++i)
            acc = op_add(tp, acc, op_dot_readout(tp, sites[i], readouts[i]));
        if (pe_var) *pe_var = pev;
        return acc;
    };

    TapeT<double> tp;
    Var pe_var;
    Var scalar = run(pe, tp, true, &pe_var);
    tp.backward(scalar);

    Rng probe(13);
    for (int p = 0; p < 6; ++p) {
        const int64_t idx = probe.uniform_int(pe.numel());
        auto eval = [&](double delta) {
            TensorT<double> pe2 = pe;
            pe2[idx] += delta;
            TapeT<double> t2;
            Var s = run(pe2, t2, false, nullptr);
            return (double)t2.val(s)[0];
        };
        const double fd = testutil::central_diff(eval, 1e-4);
        const double bp = tp.grad(pe_var)[idx];
        INFO("idx " << idx << " fd " << fd << " bp " << bp);
        CHECK(testutil::rel_err(fd, bp) < 1e-3);
    }
}

TEST_CASE("integrate_multi_person: identity, arithmetic, fold oracle, errors") {
    const auto specs = injection_sites(small_cfg());

    // n = 1: both outputs equal the inputs bitwise
    Rng rng(14);
    InjectionSet one = InjectionSet::zeros(specs, 1);
    for (auto& s : one.sites) rng.fill_normal(s);
    const auto [ls, gs] = integrate_multi_person({one}, {one});
    for (size_t i = 0; i < one.sites.size(); ++i) {
        CHECK(ls.sites[i].data == one.sites[i].data);
        CHECK(gs.sites[i].data == one.sites[i].data);
    }

    // scalar-site example: locals {2,3} -> 5; globals {2,4} -> 3
    InjectionSet a = InjectionSet::zeros(specs, 1), b = InjectionSet::zeros(specs, 1);
    InjectionSet ga = InjectionSet::zeros(specs, 1), gb = InjectionSet::zeros(specs, 1);
    a.sites[0].fill(2.0f);
    b.sites[0].fill(3.0f);
    ga.sites[0].fill(2.0f);
    gb.sites[0].fill(4.0f);
    const auto [sum2, avg2] = integrate_multi_person({a, b}, {ga, gb});
    CHECK(sum2.sites[0][0] == 5.0f);
    CHECK(avg2.sites[0][0] == 3.0f);

    // n = 3 random sets vs independent fold oracle
    std::vector<InjectionSet> locals, globals;
    std::vector<std::vector<Tensor>> lraw, graw;
    for (int k = 0; k < 3; ++k) {
        InjectionSet l = InjectionSet::zeros(specs, 1), g = InjectionSet::zeros(specs, 1);
        for (auto& s : l.sites) rng.fill_normal(s);
        for (auto& s : g.sites) rng.fill_normal(s);
        lraw.push_back(l.sites);
        graw.push_back(g.sites);
        locals.push_back(std::move(l));
        globals.push_back(std::move(g));
    }
    const auto [sum3, avg3] = integrate_multi_person(locals, globals);
    const auto want_sum = testutil::fold_sum_oracle(lraw, false);
    const auto want_avg = testutil::fold_sum_oracle(graw, true);
    for (size_t i = 0; i < specs.size(); ++i) {
        CHECK(max_abs_diff(sum3.sites[i], want_sum[i]) < 1e-7f);
        CHECK(max_abs_diff(avg3.sites[i], want_avg[i]) < 1e-7f);
    }

    CHECK_THROWS_AS(integrate_multi_person({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(integrate_multi_person({a}, {ga, gb}), std::invalid_argument);
}
