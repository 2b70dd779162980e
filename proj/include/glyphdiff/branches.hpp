#pragma once

#include <string>
#include <vector>

#include "glyphdiff/conditions.hpp"
#include "glyphdiff/denoiser.hpp"

namespace glyphdiff {

// Per-person inputs for one branch pass (Fig. of the dual-branch design):
// identity tokens, pose-expression map, and square-bbox location guidance.
struct PersonConditionPack {
    IdentityEmbedding p_id;
    PoseExprMap c_pe;
    LocationGuidance loc;
};

// ControlNet-style branch: a zero-initialized condition stem, trainable
// copies of the base encoder + middle block (prompt cross-attention consumes
// the ID embedding), and one zero-initialized 1x1 output projection per
// injection site.
template <typename S>
struct ControlBranchT {
    DenoiserConfig cfg;
    int cond_channels = 0;

    Conv2dT<S> stem;  // condition -> latent channels, zero conv
    Conv2dT<S> conv_in;
    LinearT<S> temb1, temb2;
    ResBlockT<S> e00, e01, e10, e11, e20, e21;
    CrossAttentionT<S> ea10, ea11, ea20, ea21;
    Conv2dT<S> down0, down1;
    ResBlockT<S> m1, m2;
    CrossAttentionT<S> ma;
    std::vector<Conv2dT<S>> out_proj;  // 7 zero convs, site order [mid, d0..d5]

    void init(const std::string& p, const UNetT<S>& base, int cond_channels_, Rng& rng) {
        cfg = base.cfg;
        cond_channels = cond_channels_;
        const int w0 = cfg.widths[0], w1 = cfg.widths[1], w2 = cfg.widths[2];
        stem.init(p + ".stem", 3, cond_channels, cfg.latent_c, 1, 1, rng, /*zero_init=*/true);

        conv_in.init(p + ".conv_in", 3, cfg.latent_c, w0, 1, 1, rng);
        temb1.init(p + ".temb1", cfg.sin_dim, cfg.temb_dim, rng);
        temb2.init(p + ".temb2", cfg.temb_dim, cfg.temb_dim, rng);
        e00.init(p + ".e00", w0, w0, cfg.temb_dim, cfg.groups, rng);
        e01.init(p + ".e01", w0, w0, cfg.temb_dim, cfg.groups, rng);
        down0.init(p + ".down0", 3, w0, w1, 2, 1, rng);
        e10.init(p + ".e10", w1, w1, cfg.temb_dim, cfg.groups, rng);
        ea10.init(p + ".ea10", w1, cfg.token_dim, cfg.groups, rng);
        e11.init(p + ".e11", w1, w1, cfg.temb_dim, cfg.groups, rng);
        ea11.init(p + ".ea11", w1, cfg.token_dim, cfg.groups, rng);
        down1.init(p + ".down1", 3, w1, w2, 2, 1, rng);
        e20.init(p + ".e20", w2, w2, cfg.temb_dim, cfg.groups, rng);
        ea20.init(p + ".ea20", w2, cfg.token_dim, cfg.groups, rng);
        e21.init(p + ".e21", w2, w2, cfg.temb_dim, cfg.groups, rng);
        ea21.init(p + ".ea21", w2, cfg.token_dim, cfg.groups, rng);
        m1.init(p + ".m1", w2, w2, cfg.temb_dim, cfg.groups, rng);
        ma.init(p + ".ma", w2, cfg.token_dim, cfg.groups, rng);
        m2.init(p + ".m2", w2, w2, cfg.temb_dim, cfg.groups, rng);

        copy_trunk_from(base);

        const auto sites = injection_sites(cfg);
        out_proj.resize(sites.size());
        for (size_t i = 0; i < sites.size(); ++i)
            out_proj[i].init(p + ".proj" + std::to_string(i), 1, sites[i].channels,
                             sites[i].channels, 1, 0, rng, /*zero_init=*/true);
    }

    // trainable copy blocks start from the frozen base encoder + middle
    void copy_trunk_from(const UNetT<S>& base) {
        auto cp = [](auto& dst, const auto& src) { dst.value = src.value; };
        auto cp_conv = [&](Conv2dT<S>& d, const Conv2dT<S>& s) { cp(d.w, s.w); cp(d.b, s.b); };
        auto cp_lin = [&](LinearT<S>& d, const LinearT<S>& s) { cp(d.w, s.w); cp(d.b, s.b); };
        auto cp_gn = [&](GroupNormT<S>& d, const GroupNormT<S>& s) {
            cp(d.gamma, s.gamma); cp(d.beta, s.beta);
        };
        auto cp_rb = [&](ResBlockT<S>& d, const ResBlockT<S>& s) {
            cp_gn(d.gn1, s.gn1); cp_conv(d.conv1, s.conv1); cp_lin(d.temb_proj, s.temb_proj);
            cp_gn(d.gn2, s.gn2); cp_conv(d.conv2, s.conv2);
            if (s.has_skip) cp_conv(d.skip, s.skip);
        };
        auto cp_attn = [&](CrossAttentionT<S>& d, const CrossAttentionT<S>& s) {
            cp_gn(d.norm, s.norm); cp_lin(d.to_q, s.to_q); cp_lin(d.to_k, s.to_k);
            cp_lin(d.to_v, s.to_v); cp_lin(d.to_out, s.to_out);
        };
        cp_conv(conv_in, base.conv_in);
        cp_lin(temb1, base.temb1);
        cp_lin(temb2, base.temb2);
        cp_rb(e00, base.e00); cp_rb(e01, base.e01); cp_conv(down0, base.down0);
        cp_rb(e10, base.e10); cp_attn(ea10, base.ea10);
        cp_rb(e11, base.e11); cp_attn(ea11, base.ea11); cp_conv(down1, base.down1);
        cp_rb(e20, base.e20); cp_attn(ea20, base.ea20);
        cp_rb(e21, base.e21); cp_attn(ea21, base.ea21);
        cp_rb(m1, base.m1); cp_attn(ma, base.ma); cp_rb(m2, base.m2);
    }

    // z_in: branch latent input (full z_t for the global branch, cropped
    // up-sampled latent for the local one); cond: (N,hw,hw,cond_channels).
    // Returns 7 projected site outputs in order [mid, d0..d5].
    std::vector<Var> forward(TapeT<S>& tp, Var z_in, Var cond, Var id_tokens,
                             const std::vector<int>& ts) {
        if (tp.val(cond).dim(3) != cond_channels)
            throw std::invalid_argument("branch forward: condition channel mismatch");
        Var x = op_add(tp, z_in, stem.fwd(tp, cond));
        Var e = tp.leaf(sinusoidal_embedding<S>(ts, cfg.sin_dim));
        Var temb = temb2.fwd(tp, op_silu(tp, temb1.fwd(tp, e)));

        std::vector<Var> taps;
        Var h = conv_in.fwd(tp, x);
        h = e00.fwd(tp, h, temb);
        taps.push_back(h);
        h = e01.fwd(tp, h, temb);
        taps.push_back(h);
        h = down0.fwd(tp, h);
        h = ea10.fwd(tp, e10.fwd(tp, h, temb), id_tokens);
        taps.push_back(h);
        h = ea11.fwd(tp, e11.fwd(tp, h, temb), id_tokens);
        taps.push_back(h);
        h = down1.fwd(tp, h);
        h = ea20.fwd(tp, e20.fwd(tp, h, temb), id_tokens);
        taps.push_back(h);
        h = ea21.fwd(tp, e21.fwd(tp, h, temb), id_tokens);
        taps.push_back(h);
        h = m1.fwd(tp, h, temb);
        h = ma.fwd(tp, h, id_tokens);
        h = m2.fwd(tp, h, temb);
        taps.push_back(h);

        // site order [mid, d0, d1, d2, d3, d4, d5] maps to taps
        // [mid, e21, e20, e11, e10, e01, e00]
        static const int tap_for_site[7] = {6, 5, 4, 3, 2, 1, 0};
        std::vector<Var> sites(7);
        for (int i = 0; i < 7; ++i)
            sites[(size_t)i] = out_proj[(size_t)i].fwd(tp, taps[(size_t)tap_for_site[i]]);
        return sites;
    }

    void visit(const ParamVisitor<S>& v) {
        stem.visit(v);
        conv_in.visit(v);
        temb1.visit(v); temb2.visit(v);
        e00.visit(v); e01.visit(v); down0.visit(v);
        e10.visit(v); ea10.visit(v); e11.visit(v); ea11.visit(v); down1.visit(v);
        e20.visit(v); ea20.visit(v); e21.visit(v); ea21.visit(v);
        m1.visit(v); ma.visit(v); m2.visit(v);
        for (auto& t : out_proj) t.visit(v);
    }
};

using ControlBranch = ControlBranchT<float>;

// latent-space face rect for the crop / relocation path
inline RectI latent_face_rect(const RectI& square_px, int image_size, int grid_size) {
    return scale_rect_outward(square_px, image_size, grid_size);
}

// crop the face area of z_t and bilinearly up-sample it to the full latent
// size (the scale-alignment step of the local branch)
template <typename S>
Var crop_upsample_latent(TapeT<S>& tp, Var z_t, const std::vector<RectI>& latent_rects) {
    const int hw = tp.val(z_t).dim(1);
    return op_crop_bilinear_up(tp, z_t, latent_rects, hw, hw);
}

// full local branch: crop/up-sample, branch blocks on the aligned latent,
// per-site projection, relocation back to the face position at each site's
// own resolution
template <typename S>
std::vector<Var> local_branch_forward(TapeT<S>& tp, ControlBranchT<S>& branch, Var z_t,
                                      Var c_pe, Var id_tokens, const std::vector<int>& ts,
                                      const std::vector<RectI>& square_px, int image_size) {
    const int hw = branch.cfg.latent_hw;
    std::vector<RectI> lat_rects;
    lat_rects.reserve(square_px.size());
    for (const auto& sq : square_px) lat_rects.push_back(latent_face_rect(sq, image_size, hw));
    Var zhat = crop_upsample_latent(tp, z_t, lat_rects);
    std::vector<Var> sites = branch.forward(tp, zhat, c_pe, id_tokens, ts);
    const auto specs = injection_sites(branch.cfg);
    for (size_t i = 0; i < sites.size(); ++i) {
        std::vector<RectI> site_rects;
        site_rects.reserve(square_px.size());
        for (const auto& sq : square_px)
            site_rects.push_back(scale_rect_outward(sq, image_size, specs[i].hw));
        sites[i] = op_relocate(tp, sites[i], site_rects);
    }
    return sites;
}

// global branch: full latent plus the location-mask condition, no relocation
template <typename S>
std::vector<Var> global_branch_forward(TapeT<S>& tp, ControlBranchT<S>& branch, Var z_t,
                                       Var c_loc, Var id_tokens, const std::vector<int>& ts) {
    return branch.forward(tp, z_t, c_loc, id_tokens, ts);
}

// Multi-person integration: local injections are summed (each only touches
// its own face rect), global injections are averaged.
std::pair<InjectionSet, InjectionSet> integrate_multi_person(
    const std::vector<InjectionSet>& locals, const std::vector<InjectionSet>& globals);

}  // namespace glyphdiff
