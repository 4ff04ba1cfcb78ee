#include <pivkit/field.hpp>

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace pivkit;
using pivkit::testing::TempDir;

namespace {

// cols x rows field, unit calibration, every node valid with displacement (u, v).
VectorField uniform_field(int cols, int rows, double u, double v)
{
    VectorField f;
    f.cols = cols;
    f.rows = rows;
    f.calibration = {1.0, 1.0};
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            FieldNode n;
            n.x_px = 16.0 * c + 7.5;
            n.y_px = 16.0 * r + 7.5;
            n.x_m = n.x_px;
            n.y_m = 100.0 - n.y_px;
            n.u = u;
            n.v = v;
            n.valid = true;
            n.snr = 3.0;
            f.nodes.push_back(n);
        }
    return f;
}

} // namespace

TEST(ToVelocity, CalibrationArithmetic)
{
    const Calibration cal{kDefaultMetersPerPixel, 1.0 / 60.0};
    DisplacementEstimate e;
    auto vel = to_velocity(e, cal);
    EXPECT_EQ(vel.u, 0.0);
    EXPECT_EQ(vel.v, 0.0);

    e.dx = 8.0;
    EXPECT_NEAR(to_velocity(e, cal).u, 0.03, 1e-15);
    e.dx = 40.0;
    EXPECT_NEAR(to_velocity(e, cal).u, 0.15, 1e-15);
}

TEST(ToVelocity, Linearity)
{
    const Calibration cal{kDefaultMetersPerPixel, 1.0 / 64.0};
    const Calibration half{kDefaultMetersPerPixel, 1.0 / 128.0};
    DisplacementEstimate e;
    e.dx = 3.25;
    e.dy = -1.5;
    const auto base = to_velocity(e, cal);
    for (double k : {2.0, 4.0, 0.5, 0.25}) {
        DisplacementEstimate s = e;
        s.dx *= k;
        s.dy *= k;
        const auto scaled = to_velocity(s, cal);
        EXPECT_EQ(scaled.u, k * base.u);
        EXPECT_EQ(scaled.v, k * base.v);
    }
    EXPECT_EQ(to_velocity(e, half).u, 2.0 * base.u);
}

TEST(AssembleField, CoordinatesAndFlags)
{
    const auto grid = build_grid(256, 128, 64, 0.5);
    std::vector<DisplacementEstimate> est(grid.size());
    for (auto& e : est) {
        e.dx = 4.0;
        e.dy = 2.0; // downward in pixels
        e.valid = true;
        e.snr = 5.0;
    }
    est[1].valid = false;
    est[2].snr.reset();
    const Calibration cal{0.001, 0.5};
    const auto f = assemble_field(grid, est, cal);
    ASSERT_EQ(f.size(), grid.size());
    EXPECT_EQ(f.cols, grid.cols);
    const auto& n0 = f.nodes[0];
    EXPECT_DOUBLE_EQ(n0.x_px, grid.origins[0].x + 31.5);
    EXPECT_DOUBLE_EQ(n0.x_m, n0.x_px * 0.001);
    EXPECT_DOUBLE_EQ(n0.y_m, (127 - n0.y_px) * 0.001);
    EXPECT_DOUBLE_EQ(n0.u, 0.008);
    EXPECT_DOUBLE_EQ(n0.v, -0.004); // flipped to physically upward
    EXPECT_FALSE(f.nodes[1].valid);
    EXPECT_EQ(f.nodes[1].u, 0.0);
    EXPECT_EQ(f.nodes[1].v, 0.0);
    EXPECT_TRUE(std::isinf(f.nodes[2].snr));
}

TEST(ValidateMedian, UniformFieldUntouched)
{
    const auto f = validate_median(uniform_field(5, 4, 1.0, 0.5));
    EXPECT_EQ(f.valid_count(), 20u);
}

TEST(ValidateMedian, SingleOutlierRejected)
{
    // 3x3 patch: centre |10 - 1| / (0 + 0.1) = 90 > 2; each edge node sees the
    // outlier as one of 3 or 5 neighbours, median residual 0, own residual 0.
    for (auto [c, r] : {std::pair{1, 1}, std::pair{0, 0}, std::pair{2, 1}}) {
        auto f = uniform_field(3, 3, 1.0, 0.0);
        f.at(c, r).u += 10.0;
        const auto out = validate_median(f, 2.0, 0.1);
        EXPECT_EQ(out.valid_count(), 8u);
        EXPECT_FALSE(out.at(c, r).valid);
        EXPECT_TRUE(out.at(c, r).rejected);
        EXPECT_EQ(out.at(c, r).u, 11.0); // measurement kept for neighbour statistics
    }
    auto big = uniform_field(9, 7, 0.3, -0.2);
    big.at(4, 3).v += 10.0;
    const auto out = validate_median(big);
    EXPECT_EQ(out.valid_count(), 62u);
    EXPECT_FALSE(out.at(4, 3).valid);
}

TEST(ValidateMedian, VerdictsComeFromInputNeighbourhoods)
{
    // Oracle: one pass, every measured input neighbour counts, sorted medians.
    auto med = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    std::mt19937_64 rng(5);
    std::normal_distribution<double> noise(0.0, 0.2);
    std::uniform_int_distribution<int> pick(0, 12 * 10 - 1);
    for (int trial = 0; trial < 30; ++trial) {
        auto f = uniform_field(12, 10, 0.0, 0.0);
        for (int r = 0; r < f.rows; ++r)
            for (int c = 0; c < f.cols; ++c) {
                f.at(c, r).u = 0.4 * r + noise(rng);
                f.at(c, r).v = noise(rng);
            }
        for (int k = 0; k < 10; ++k)
            f.nodes[pick(rng)].u += 15.0;
        for (int k = 0; k < 6; ++k)
            mark_invalid(f.nodes[pick(rng)]);

        const auto out = validate_median(f);
        for (int r = 0; r < f.rows; ++r)
            for (int c = 0; c < f.cols; ++c) {
                const FieldNode& n = f.at(c, r);
                bool expect_valid = n.valid;
                if (n.valid) {
                    std::vector<double> us, vs;
                    for (int rr = r - 1; rr <= r + 1; ++rr)
                        for (int cc = c - 1; cc <= c + 1; ++cc)
                            if ((rr != r || cc != c) && rr >= 0 && cc >= 0 && rr < f.rows && cc < f.cols &&
                                f.at(cc, rr).valid) {
                                us.push_back(f.at(cc, rr).u);
                                vs.push_back(f.at(cc, rr).v);
                            }
                    auto resid = [&](const std::vector<double>& xs, double d) {
                        const double m = med(xs);
                        std::vector<double> dev;
                        for (double x : xs)
                            dev.push_back(std::abs(x - m));
                        return std::abs(d - m) / (med(dev) + 0.1);
                    };
                    if (!us.empty())
                        expect_valid = std::max(resid(us, n.u), resid(vs, n.v)) <= 2.0;
                }
                ASSERT_EQ(out.at(c, r).valid, expect_valid) << "trial " << trial << " node " << c << "," << r;
            }
        EXPECT_EQ(validate_median(out).valid_count(), out.valid_count());
    }
}

TEST(ValidateMedian, RejectedNodesWrittenAsZero)
{
    auto f = uniform_field(3, 3, 1.0, 0.0);
    f.at(1, 1).u = 50.0;
    const auto out = validate_median(f);
    ASSERT_FALSE(out.at(1, 1).valid);
    const auto text = format_field(out);
    EXPECT_EQ(text.find(",50,"), std::string::npos);
    const auto filled = fill_invalid(out);
    EXPECT_TRUE(filled.at(1, 1).valid);
    EXPECT_FALSE(filled.at(1, 1).rejected);
    EXPECT_EQ(filled.at(1, 1).u, 1.0);
}

TEST(ValidateMedian, EpsilonIsInPixels)
{
    // 0.05 m/s with mpp 0.001 and dt 0.01 is 0.5 px.
    auto f = uniform_field(3, 3, 0.0, 0.0);
    f.calibration = {0.001, 0.01};
    f.at(1, 1).u = 0.05e-1; // 0.05 px: 0.05 / 0.1 = 0.5 < 2
    EXPECT_EQ(validate_median(f).valid_count(), 9u);
    f.at(1, 1).u = 0.05; // 0.5 px: 5 > 2
    EXPECT_EQ(validate_median(f).valid_count(), 8u);
}

TEST(ValidateMedian, AllInvalidUnchanged)
{
    auto f = uniform_field(4, 4, 1.0, 1.0);
    for (auto& n : f.nodes)
        mark_invalid(n);
    const auto out = validate_median(f);
    EXPECT_EQ(out.valid_count(), 0u);
}

TEST(ValidateMedian, Idempotent)
{
    std::mt19937_64 rng(21);
    std::normal_distribution<double> noise(0.0, 0.3);
    std::uniform_int_distribution<int> pick(0, 11 * 9 - 1);
    for (int trial = 0; trial < 20; ++trial) {
        auto f = uniform_field(11, 9, 2.0, 1.0);
        for (auto& n : f.nodes) {
            n.u += noise(rng);
            n.v += noise(rng);
        }
        for (int k = 0; k < 8; ++k)
            f.nodes[pick(rng)].u += 8.0 * noise(rng) * 10;
        const auto once = validate_median(f);
        const auto twice = validate_median(once);
        ASSERT_EQ(once.valid_count(), twice.valid_count());
        for (std::size_t i = 0; i < once.size(); ++i)
            ASSERT_EQ(once.nodes[i].valid, twice.nodes[i].valid);
    }
}

TEST(FillInvalid, SingleHole)
{
    auto f = uniform_field(5, 5, 0.12, -0.03);
    mark_invalid(f.at(2, 2));
    const auto out = fill_invalid(f);
    EXPECT_TRUE(out.at(2, 2).valid);
    EXPECT_TRUE(out.at(2, 2).interpolated);
    EXPECT_DOUBLE_EQ(out.at(2, 2).u, 0.12);
    EXPECT_DOUBLE_EQ(out.at(2, 2).v, -0.03);
    EXPECT_EQ(out.at(2, 2).snr, 0.0);
    EXPECT_FALSE(out.at(1, 1).interpolated);
}

TEST(FillInvalid, TwoNeighboursNotEnough)
{
    auto f = uniform_field(3, 3, 1.0, 1.0);
    for (auto& n : f.nodes)
        mark_invalid(n);
    f.at(0, 0).valid = true;
    f.at(0, 0).u = 1.0;
    f.at(1, 0).valid = true;
    f.at(1, 0).u = 1.0;
    const auto out = fill_invalid(f);
    EXPECT_FALSE(out.at(0, 1).valid); // sees (0,0) and (1,0) only
    EXPECT_FALSE(out.at(1, 1).valid);
    EXPECT_EQ(out.valid_count(), 2u);
}

TEST(FillInvalid, Checkerboard)
{
    for (int parity : {0, 1}) {
        auto f = uniform_field(8, 7, 0.4, 0.1);
        for (int r = 0; r < f.rows; ++r)
            for (int c = 0; c < f.cols; ++c)
                if ((r + c) % 2 == parity)
                    mark_invalid(f.at(c, r));
        const auto out = fill_invalid(f);
        for (const auto& n : out.nodes) {
            ASSERT_TRUE(n.valid);
            ASSERT_DOUBLE_EQ(n.u, 0.4);
            ASSERT_DOUBLE_EQ(n.v, 0.1);
        }
    }
}

TEST(AverageFields, NodeWiseOverValid)
{
    auto a = uniform_field(2, 1, 1.0, 0.0);
    auto b = uniform_field(2, 1, 3.0, 2.0);
    auto c = uniform_field(2, 1, 100.0, 100.0);
    mark_invalid(c.at(0, 0));
    mark_invalid(c.at(1, 0));
    mark_invalid(b.at(1, 0));
    const std::vector<VectorField> fields{a, b, c};
    const auto avg = average_fields(fields);
    EXPECT_DOUBLE_EQ(avg.at(0, 0).u, 2.0);
    EXPECT_DOUBLE_EQ(avg.at(0, 0).v, 1.0);
    EXPECT_DOUBLE_EQ(avg.at(1, 0).u, 1.0);

    auto d = a;
    mark_invalid(d.at(0, 0));
    const std::vector<VectorField> none{d, d};
    EXPECT_FALSE(average_fields(none).at(0, 0).valid);
}

TEST(FieldCsv, HeaderAndRows)
{
    TempDir dir;
    VectorField f;
    f.cols = f.rows = 1;
    f.calibration = {kDefaultMetersPerPixel, 1.0 / 60.0};
    FieldNode n;
    n.x_px = 63.5;
    n.y_px = 63.5;
    n.x_m = 63.5 * kDefaultMetersPerPixel;
    n.y_m = 0.01;
    n.u = 0.03;
    n.valid = true;
    n.snr = std::numeric_limits<double>::infinity();
    f.nodes.push_back(n);
    write_field(f, dir / "one.csv");
    const auto lines = csv::read_lines(dir / "one.csv");
    ASSERT_EQ(lines.size(), 2u);
    EXPECT_EQ(lines[0], "x_px,y_px,x_m,y_m,u_mps,v_mps,valid,snr");
    EXPECT_EQ(lines[1], "63.5,63.5,0.00396875,0.01,0.03,0,1,inf");
}

TEST(FieldCsv, RoundTripAndDeterminism)
{
    TempDir dir;
    const auto grid = build_grid(1920, 1080, 128, 0.5);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> d(-20.0, 20.0), s(1.0, 40.0);
    std::vector<DisplacementEstimate> est(grid.size());
    for (auto& e : est) {
        e.dx = d(rng);
        e.dy = d(rng);
        e.valid = rng() % 10 != 0;
        e.snr = s(rng);
    }
    const auto f = fill_invalid(assemble_field(grid, est, {kDefaultMetersPerPixel, 1.0 / 60.0}));
    write_field(f, dir / "a.csv");
    write_field(f, dir / "b.csv");
    EXPECT_EQ(csv::read_lines(dir / "a.csv"), csv::read_lines(dir / "b.csv"));
    EXPECT_EQ(csv::read_lines(dir / "a.csv").size(), 436u);

    const auto back = read_field(dir / "a.csv", f.calibration);
    ASSERT_EQ(back.cols, f.cols);
    ASSERT_EQ(back.rows, f.rows);
    for (std::size_t i = 0; i < f.size(); ++i) {
        const auto &x = f.nodes[i], &y = back.nodes[i];
        ASSERT_NEAR(x.x_px, y.x_px, 1e-9);
        ASSERT_NEAR(x.y_px, y.y_px, 1e-9);
        ASSERT_NEAR(x.x_m, y.x_m, 1e-9);
        ASSERT_NEAR(x.y_m, y.y_m, 1e-9);
        ASSERT_NEAR(x.u, y.u, 1e-9);
        ASSERT_NEAR(x.v, y.v, 1e-9);
        ASSERT_EQ(x.valid, y.valid);
        ASSERT_EQ(x.interpolated, y.interpolated);
        // 9 significant digits: relative, not absolute, for the ratio column.
        ASSERT_NEAR(x.snr, y.snr, 5e-9 * std::max(1.0, std::abs(x.snr)));
    }
    const auto inferred = read_field(dir / "a.csv");
    EXPECT_NEAR(inferred.calibration.meters_per_pixel, kDefaultMetersPerPixel, 1e-15);
}

TEST(FieldCsv, Errors)
{
    TempDir dir;
    csv::write_text(dir / "bad_header.csv", "x,y\n1,2\n");
    EXPECT_THROW(read_field(dir / "bad_header.csv"), Error);
    csv::write_text(dir / "bad_row.csv", "x_px,y_px,x_m,y_m,u_mps,v_mps,valid,snr\n1,2,3\n");
    try {
        read_field(dir / "bad_row.csv");
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    }
    EXPECT_THROW(write_field(uniform_field(1, 1, 0, 0), dir / "missing" / "x.csv"), Error);
}
