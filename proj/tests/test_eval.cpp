#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "glyphdiff/evalsuite.hpp"
#include "test_util.hpp"

using namespace glyphdiff;
namespace fs = std::filesystem;

TEST_CASE("wilson interval against frozen reference values") {
    const WilsonInterval a = wilson_interval(50, 100);
    CHECK(a.lo == doctest::Approx(0.4038315303).epsilon(1e-6));
    CHECK(a.hi == doctest::Approx(0.5961684697).epsilon(1e-6));
    const WilsonInterval b = wilson_interval(0, 10);
    CHECK(b.lo == doctest::Approx(0.0));
    CHECK(b.hi == doctest::Approx(0.2775328).epsilon(1e-5));
    const WilsonInterval c = wilson_interval(199, 200);
    CHECK(c.lo == doctest::Approx(0.9722262956).epsilon(1e-6));
    CHECK(c.hi == doctest::Approx(0.9991168313).epsilon(1e-6));
}

TEST_CASE("two-proportion and exact binomial tests against frozen references") {
    CHECK(two_proportion_p_value(170, 200, 140, 200) ==
          doctest::Approx(0.000164008).epsilon(1e-4));
    CHECK(two_proportion_p_value(100, 200, 100, 200) == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(two_proportion_p_value(140, 200, 170, 200) > 0.99);

    CHECK(binomial_test_two_sided(3, 200, 1.0 / 64.0) > 0.99);
    CHECK(binomial_test_two_sided(10, 200, 1.0 / 64.0) ==
          doctest::Approx(0.0013314).epsilon(1e-3));
    CHECK(binomial_test_two_sided(30, 200, 1.0 / 64.0) < 1e-15);
}

TEST_CASE("rect IoU: identity, disjoint, partial") {
    CHECK(rect_iou(RectI{2, 2, 10, 10}, RectI{2, 2, 10, 10}) == doctest::Approx(1.0));
    CHECK(rect_iou(RectI{0, 0, 4, 4}, RectI{8, 8, 12, 12}) == 0.0);
    CHECK(rect_iou(RectI{0, 0, 4, 4}, RectI{2, 0, 6, 4}) == doctest::Approx(8.0 / 24.0));
    CHECK(rect_iou(RectI{0, 0, 0, 0}, RectI{0, 0, 4, 4}) == 0.0);
}

TEST_CASE("eval report: exact CSV schema and byte-identical re-render") {
    EvalReport rep;
    rep.config_digest = "cfg";
    rep.model_digest = "model";
    EvalRow r;
    r.scenario = "identity";
    r.size_bin = "0.2500";
    r.identity_top1 = 0.8571234;
    r.identity_margin = 0.25;
    r.location_iou = 0.61;
    r.pose_mae_rad = 0.04;
    r.expr_mae = 0.03;
    r.n_samples = 200;
    rep.rows.push_back(r);

    const std::string csv1 = rep.to_csv();
    const std::string csv2 = rep.to_csv();
    CHECK(csv1 == csv2);
    const std::string header = csv1.substr(0, csv1.find('\n'));
    CHECK(header == std::string(kEvalCsvHeader));
    CHECK(csv1.find("identity,0.2500,0.857123,0.250000,0.610000,0.040000,0.030000,200") !=
          std::string::npos);
}

TEST_CASE("summarize_records arithmetic") {
    std::vector<SampleRecord> recs(4);
    for (int i = 0; i < 4; ++i) {
        recs[(size_t)i].requested_identity = i;
        recs[(size_t)i].oracle_argmax = i < 3 ? i : 0;  // 3 of 4 correct
        recs[(size_t)i].margin = 0.5;
        recs[(size_t)i].iou = 0.25 * i;
        recs[(size_t)i].pose_err = 0.1;
        recs[(size_t)i].expr_err = 0.2;
    }
    const EvalRow row = summarize_records("s", "b", recs);
    CHECK(row.identity_top1 == doctest::Approx(0.75));
    CHECK(row.identity_margin == doctest::Approx(0.5));
    CHECK(row.location_iou == doctest::Approx((0.0 + 0.25 + 0.5 + 0.75) / 4));
    CHECK(row.pose_mae_rad == doctest::Approx(0.1));
    CHECK(row.expr_mae == doctest::Approx(0.2));
    CHECK(row.n_samples == 4);
    CHECK(row.top1_ci.lo < 0.75);
    CHECK(row.top1_ci.hi > 0.75);
}

TEST_CASE("emit_figures: cell count equals requested samples, files written") {
    const std::string dir = (fs::temp_directory_path() / "gd_fig_test").string();
    fs::remove_all(dir);
    std::vector<SampleRecord> recs(5);
    Rng rng(3);
    for (auto& r : recs) {
        r.reference = Image(16, 16);
        r.generated = Image(16, 16);
        for (auto& v : r.generated.data) v = (float)rng.uniform();
        r.pe_map = Tensor({16, 16, kPoseExprChannels});
        r.loc_mask = Plane(16, 16);
    }
    EvalReport rep;
    rep.rows.push_back(summarize_records("figtest", "bin", recs));
    emit_figures(rep, recs, dir, "figtest");

    CHECK(fs::exists(fs::path(dir) / "figtest.csv"));
    CHECK(fs::exists(fs::path(dir) / "figtest.json"));
    const Image sheet = read_png((fs::path(dir) / "figtest_sheet.png").string());
    // 5 records -> 3 columns x 2 rows of 4-pane cells
    const int cols = 3, rows = 2;
    CHECK(sheet.width == cols * (4 * 64 + 6));
    CHECK(sheet.height == rows * 66);

    std::ifstream csv(fs::path(dir) / "figtest.csv");
    std::string header;
    std::getline(csv, header);
    CHECK(header == std::string(kEvalCsvHeader));
    fs::remove_all(dir);
}
