#include <doctest.h>

#include "fewcount/correlation.hpp"
#include "fewcount/grad_check.hpp"

#include "helpers.hpp"

using namespace fewcount;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

// Graph-owned backbone vars with identity-ish defaults (gamma 1, beta 0).
template <typename T>
struct BackboneFixture {
    Tensor<T> rm, rv;
    BackboneVars<T> vars;
    BackboneFixture(Graph<T>& g, Tensor<T> kernels, bool requires_grad = false)
        : rm(Shape{kernels.dim(0)}), rv(Tensor<T>::full(Shape{kernels.dim(0)}, T(1))) {
        int k = kernels.dim(0);
        vars.kernels = g.leaf(std::move(kernels), requires_grad);
        vars.bn_gamma = g.leaf(Tensor<T>::full(Shape{k}, T(1)));
        vars.bn_beta = g.leaf(Tensor<T>(Shape{k}));
        vars.bn_running_mean = &rm;
        vars.bn_running_var = &rv;
    }
};

template <typename T>
ProjectionVars<T> identityless_projection(Graph<T>& g, int c_out, int c_in, Rng& rng) {
    ProjectionVars<T> p;
    p.conv_w = g.leaf(testutil::random_tensor<T>({c_out, c_in, 1, 1}, rng, -0.5, 0.5));
    p.conv_b = g.leaf(testutil::random_tensor<T>({c_out}, rng, -0.1, 0.1));
    p.ln_gamma = g.leaf(Tensor<T>::full(Shape{c_out}, T(1)));
    p.ln_beta = g.leaf(Tensor<T>(Shape{c_out}));
    return p;
}

template <typename T>
FusionVars<T> random_fusion(Graph<T>& g, int c, Rng& rng, bool zero = false) {
    auto t = [&](Shape s, double lo, double hi) {
        return g.leaf(zero ? Tensor<T>(s) : testutil::random_tensor<T>(s, rng, lo, hi));
    };
    FusionVars<T> f;
    f.proj_w = t({1}, 0.5, 1.0);
    f.proj_b = t({1}, -0.1, 0.1);
    f.ln1_gamma = g.leaf(Tensor<T>::full(Shape{c}, T(1)));
    f.ln1_beta = g.leaf(Tensor<T>(Shape{c}));
    f.h1_w = t({c, c, 3, 3}, -0.2, 0.2);
    f.h1_b = t({c}, -0.05, 0.05);
    f.h2_w = t({c, c, 3, 3}, -0.2, 0.2);
    f.h2_b = t({c}, -0.05, 0.05);
    f.ln2_gamma = g.leaf(Tensor<T>::full(Shape{c}, T(1)));
    f.ln2_beta = g.leaf(Tensor<T>(Shape{c}));
    return f;
}

} // namespace

TEST_CASE("extract_query_feature halves a 680x680 image") {
    Graph<float> g;
    Rng rng(41);
    BackboneFixture<float> bb(g, random_tensor<float>({2, 3, 7, 7}, rng, -0.1, 0.1));
    Var<float> img = g.leaf(random_tensor<float>({3, 680, 680}, rng));
    Var<float> f = extract_query_feature(img, bb.vars, Mode::eval);
    CHECK(f.shape() == Shape{2, 340, 340});
}

TEST_CASE("extract_query_feature on zero input yields zero activations") {
    Graph<double> g;
    Rng rng(42);
    BackboneFixture<double> bb(g, random_tensor<double>({4, 3, 7, 7}, rng));
    Var<double> img = g.leaf(Tensor<double>(Shape{3, 16, 16}));
    Var<double> f = extract_query_feature(img, bb.vars, Mode::train);
    CHECK(f.value().max_abs() == 0.0);
}

TEST_CASE("extract_query_feature channel count follows k") {
    Graph<float> g;
    Rng rng(43);
    BackboneFixture<float> bb(g, random_tensor<float>({128, 3, 7, 7}, rng, -0.05, 0.05));
    Var<float> img = g.leaf(random_tensor<float>({3, 32, 32}, rng));
    Var<float> f = extract_query_feature(img, bb.vars, Mode::eval);
    CHECK(f.shape() == Shape{128, 16, 16});
}

TEST_CASE("extract_query_feature rejects odd dimensions") {
    Graph<double> g;
    Rng rng(44);
    BackboneFixture<double> bb(g, random_tensor<double>({2, 3, 7, 7}, rng));
    Var<double> img = g.leaf(Tensor<double>(Shape{3, 15, 16}));
    CHECK_THROWS_AS(extract_query_feature(img, bb.vars, Mode::eval), ShapeError);
}

TEST_CASE("extract_support_features counts and shapes") {
    Graph<double> g;
    Rng rng(45);
    Var<double> feat = g.leaf(random_tensor<double>({4, 16, 16}, rng));
    std::vector<BoundingBox> boxes = {
        BoundingBox{4, 4, 8, 8}, BoundingBox{10, 6, 10, 12}, BoundingBox{16, 16, 10, 10}};
    SUBCASE("one scale gives one grid per exemplar") {
        SupportFeatures<double> s =
            extract_support_features(feat, boxes, 3, 3, {1.0}, RoiMode::align);
        CHECK(s.grids.size() == 3);
        CHECK(s.num_exemplars == 3);
        CHECK(s.num_scales == 1);
        for (const auto& v : s.grids) CHECK(v.shape() == Shape{4, 3, 3});
    }
    SUBCASE("three scales give 3K grids") {
        SupportFeatures<double> s =
            extract_support_features(feat, boxes, 3, 3, {1.0, 0.9, 1.1}, RoiMode::align);
        CHECK(s.grids.size() == 9);
        CHECK(s.num_scales == 3);
    }
    SUBCASE("constant feature gives constant support grids") {
        Var<double> flat = g.leaf(Tensor<double>::full(Shape{2, 16, 16}, 3.5));
        SupportFeatures<double> s =
            extract_support_features(flat, boxes, 3, 3, {1.0, 1.1}, RoiMode::align);
        for (const auto& v : s.grids)
            for (long long i = 0; i < v.value().size(); ++i)
                CHECK(v.value()[i] == doctest::Approx(3.5));
    }
    SUBCASE("a box pushed outside the image errors naming the exemplar") {
        std::vector<BoundingBox> bad = {BoundingBox{4, 4, 8, 8}, BoundingBox{-40, -40, 2, 2}};
        CHECK_THROWS_WITH_AS(
            extract_support_features(feat, bad, 3, 3, {1.0}, RoiMode::align),
            doctest::Contains("exemplar 1"), ValidationError);
    }
    SUBCASE("roi pooling mode works too") {
        SupportFeatures<double> s =
            extract_support_features(feat, boxes, 3, 3, {1.0}, RoiMode::pool);
        CHECK(s.grids.size() == 3);
    }
}

TEST_CASE("acfamnet_similarity arranges exemplars as batch, scales as channels") {
    Graph<float> g;
    Rng rng(46);
    Var<float> f_q = g.leaf(random_tensor<float>({256, 340, 340}, rng, -0.1, 0.1));
    std::vector<BoundingBox> boxes = {
        BoundingBox{100, 100, 40, 40}, BoundingBox{300, 200, 36, 30},
        BoundingBox{500, 400, 44, 44}};
    SupportFeatures<float> s = extract_support_features(f_q, boxes, 3, 3, {1.0}, RoiMode::align);
    std::vector<Var<float>> sim = acfamnet_similarity(f_q, s);
    REQUIRE(sim.size() == 3);
    for (const auto& m : sim) CHECK(m.shape() == Shape{1, 340, 340});
    Var<float> stacked = stack0(sim);
    CHECK(stacked.shape() == Shape{3, 1, 340, 340});
}

TEST_CASE("acfamnet_similarity with zero supports is zero") {
    Graph<double> g;
    Rng rng(47);
    Var<double> f_q = g.leaf(random_tensor<double>({3, 10, 10}, rng));
    SupportFeatures<double> s;
    s.num_exemplars = 2;
    s.num_scales = 1;
    s.grids = {g.leaf(Tensor<double>(Shape{3, 3, 3})), g.leaf(Tensor<double>(Shape{3, 3, 3}))};
    std::vector<Var<double>> sim = acfamnet_similarity(f_q, s);
    for (const auto& m : sim) CHECK(m.value().max_abs() == 0.0);
}

TEST_CASE("project_features shares weights between query and supports") {
    Graph<double> g;
    Rng rng(48);
    Tensor<double> grid = random_tensor<double>({4, 5, 5}, rng);
    Var<double> f_q = g.leaf(grid);
    SupportFeatures<double> s;
    s.num_exemplars = 1;
    s.num_scales = 1;
    s.grids = {g.leaf(grid)};
    ProjectionVars<double> p = identityless_projection<double>(g, 6, 4, rng);
    ProjectedFeatures<double> out = project_features(f_q, s, p);
    CHECK(out.query.shape() == Shape{6, 5, 5});
    REQUIRE(out.supports.size() == 1);
    CHECK(max_abs_diff(out.query.value(), out.supports[0].value()) == 0.0);
}

TEST_CASE("projected features have zero mean, unit variance before affine") {
    Graph<double> g;
    Rng rng(49);
    Var<double> f_q = g.leaf(random_tensor<double>({3, 6, 6}, rng, -2.0, 5.0));
    SupportFeatures<double> s;
    s.num_exemplars = 1;
    s.num_scales = 1;
    s.grids = {g.leaf(random_tensor<double>({3, 3, 3}, rng))};
    ProjectionVars<double> p = identityless_projection<double>(g, 8, 3, rng);
    ProjectedFeatures<double> out = project_features(f_q, s, p);
    double mean = out.query.value().dsum() / out.query.value().size();
    double var = 0.0;
    for (long long i = 0; i < out.query.value().size(); ++i) {
        double d = out.query.value()[i] - mean;
        var += d * d;
    }
    var /= out.query.value().size();
    CHECK(std::abs(mean) < 1e-10);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("compare: planted patch produces the per-exemplar maximum at its centre") {
    Graph<double> g;
    Rng rng(50);
    Tensor<double> patch = random_tensor<double>({2, 3, 3}, rng, 0.2, 1.0);
    Tensor<double> q(Shape{2, 9, 9});
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) q.at(c, 4 + i, 5 + j) = patch.at(c, i, j);
    Var<double> f_pq = g.leaf(q);
    std::vector<Var<double>> f_ps = {g.leaf(patch)};
    Var<double> r0 = compare(f_pq, f_ps);
    CHECK(r0.shape() == Shape{1, 1, 9, 9});
    int by = -1, bx = -1;
    double best = -1e30;
    for (int y = 0; y < 9; ++y)
        for (int x = 0; x < 9; ++x)
            if (r0.value().at(0, 0, y, x) > best) {
                best = r0.value().at(0, 0, y, x);
                by = y;
                bx = x;
            }
    CHECK(by == 5);
    CHECK(bx == 6);

    // zero supports produce zero scores; spatial size follows the query
    std::vector<Var<double>> zeros = {g.leaf(Tensor<double>(Shape{2, 3, 3}))};
    CHECK(compare(f_pq, zeros).value().max_abs() == 0.0);
}

TEST_CASE("enorm") {
    Graph<double> g;
    SUBCASE("K=1 gives exactly 1 everywhere") {
        Rng rng(51);
        Var<double> r0 = g.leaf(random_tensor<double>({1, 1, 4, 4}, rng));
        Var<double> en = enorm(r0, 3, 3, 8);
        for (long long i = 0; i < en.value().size(); ++i) CHECK(en.value()[i] == 1.0);
    }
    SUBCASE("identical exemplars split evenly") {
        Rng rng(52);
        Tensor<double> one = random_tensor<double>({1, 1, 3, 3}, rng);
        Tensor<double> two(Shape{2, 1, 3, 3});
        for (int i = 0; i < 9; ++i) {
            two[i] = one[i];
            two[9 + i] = one[i];
        }
        Var<double> en = enorm(g.leaf(two), 3, 3, 4);
        for (long long i = 0; i < en.value().size(); ++i)
            CHECK(en.value()[i] == doctest::Approx(0.5));
    }
    SUBCASE("hand-computed softmax for scaled scores (2,0)") {
        Tensor<double> r0(Shape{2, 1, 1, 1});
        r0[0] = 2.0;
        r0[1] = 0.0;
        Var<double> en = enorm(g.leaf(r0), 1, 1, 1); // scale divisor 1
        CHECK(en.value()[0] == doctest::Approx(0.8808).epsilon(1e-4));
        CHECK(en.value()[1] == doctest::Approx(0.1192).epsilon(1e-4));
    }
    SUBCASE("non-finite input errors") {
        Tensor<double> bad(Shape{1, 1, 1, 2});
        bad[0] = std::numeric_limits<double>::infinity();
        CHECK_THROWS_AS(enorm(g.leaf(bad), 3, 3, 4), NumericError);
    }
}

TEST_CASE("snorm") {
    Graph<double> g;
    SUBCASE("exactly 1 at each exemplar's spatial argmax") {
        Rng rng(53);
        Var<double> r0 = g.leaf(random_tensor<double>({3, 1, 5, 5}, rng));
        Var<double> sn = snorm(r0, 3, 3, 16);
        for (int k = 0; k < 3; ++k) {
            double best = -1.0;
            for (int i = 0; i < 25; ++i) best = std::max(best, sn.value()[k * 25 + i]);
            CHECK(best == 1.0);
        }
    }
    SUBCASE("spatially uniform scores give all ones") {
        Var<double> r0 = g.leaf(Tensor<double>::full(Shape{2, 1, 4, 4}, 0.7));
        Var<double> sn = snorm(r0, 3, 3, 4);
        for (long long i = 0; i < sn.value().size(); ++i) CHECK(sn.value()[i] == 1.0);
    }
    SUBCASE("scores (0, ln 2) at unit scale give (0.5, 1.0)") {
        Tensor<double> r0(Shape{1, 1, 1, 2});
        r0[0] = 0.0;
        r0[1] = std::log(2.0);
        Var<double> sn = snorm(g.leaf(r0), 1, 1, 1);
        CHECK(sn.value()[0] == doctest::Approx(0.5));
        CHECK(sn.value()[1] == doctest::Approx(1.0));
    }
}

TEST_CASE("combine_scores") {
    Graph<double> g;
    Rng rng(54);
    SUBCASE("K=1 with uniform scores gives all ones") {
        Var<double> r0 = g.leaf(Tensor<double>::full(Shape{1, 1, 3, 3}, 1.3));
        Var<double> r = combine_scores(enorm(r0, 3, 3, 4), snorm(r0, 3, 3, 4));
        for (long long i = 0; i < r.value().size(); ++i) CHECK(r.value()[i] == 1.0);
    }
    SUBCASE("values stay in (0,1] and equal the elementwise product") {
        Var<double> r0 = g.leaf(random_tensor<double>({3, 1, 6, 6}, rng, -2.0, 2.0));
        Var<double> en = enorm(r0, 3, 3, 8);
        Var<double> sn = snorm(r0, 3, 3, 8);
        Var<double> r = combine_scores(en, sn);
        for (long long i = 0; i < r.value().size(); ++i) {
            CHECK(r.value()[i] > 0.0);
            CHECK(r.value()[i] <= 1.0);
            CHECK(r.value()[i] == doctest::Approx(en.value()[i] * sn.value()[i]));
        }
    }
    SUBCASE("shape mismatch errors") {
        Var<double> a = g.leaf(Tensor<double>(Shape{1, 1, 3, 3}));
        Var<double> b = g.leaf(Tensor<double>(Shape{2, 1, 3, 3}));
        CHECK_THROWS_AS(combine_scores(a, b), ShapeError);
    }
}

TEST_CASE("weighted_aggregate replicates f_PS at a one-hot position") {
    Graph<double> g;
    Rng rng(55);
    Tensor<double> support = random_tensor<double>({2, 3, 3}, rng);
    Tensor<double> r(Shape{1, 1, 7, 7});
    r.at(0, 0, 3, 4) = 1.0;
    Var<double> out = weighted_aggregate(g.leaf(r), {g.leaf(support)});
    REQUIRE(out.shape() == Shape{2, 7, 7});
    for (int c = 0; c < 2; ++c)
        for (int y = 0; y < 7; ++y)
            for (int x = 0; x < 7; ++x) {
                int sy = y - 3 + 1, sx = x - 4 + 1; // centre offset for a 3x3 kernel
                double expect = (sy >= 0 && sy < 3 && sx >= 0 && sx < 3)
                                    ? support.at(c, sy, sx)
                                    : 0.0;
                CHECK(out.value().at(c, y, x) == doctest::Approx(expect));
            }
}

TEST_CASE("weighted_aggregate: zero scores give zero features") {
    Graph<double> g;
    Rng rng(56);
    Var<double> r = g.leaf(Tensor<double>(Shape{2, 1, 5, 5}));
    std::vector<Var<double>> ps = {g.leaf(random_tensor<double>({3, 3, 3}, rng)),
                                   g.leaf(random_tensor<double>({3, 3, 3}, rng))};
    CHECK(weighted_aggregate(r, ps).value().max_abs() == 0.0);
}

TEST_CASE("weighted_aggregate matches a brute-force flip-and-correlate oracle") {
    Rng rng(57);
    int K = 2, C = 2, hs = 3, ws = 3, H = 5, W = 5;
    Graph<double> g;
    Tensor<double> r = random_tensor<double>({K, 1, H, W}, rng);
    std::vector<Tensor<double>> supports;
    std::vector<Var<double>> support_vars;
    for (int i = 0; i < K; ++i) {
        supports.push_back(random_tensor<double>({C, hs, ws}, rng));
        support_vars.push_back(g.leaf(supports.back()));
    }
    Var<double> out = weighted_aggregate(g.leaf(r), support_vars);
    // oracle: flip each support channel, then single-channel same-pad correlation
    Tensor<double> expect(Shape{C, H, W});
    for (int i = 0; i < K; ++i) {
        Tensor<double> rmap(Shape{1, H, W});
        for (int p = 0; p < H * W; ++p) rmap[p] = r[i * H * W + p];
        for (int c = 0; c < C; ++c) {
            Tensor<double> flipped(Shape{1, hs, ws});
            for (int a = 0; a < hs; ++a)
                for (int b = 0; b < ws; ++b)
                    flipped.at(0, a, b) = supports[static_cast<size_t>(i)].at(c, hs - 1 - a,
                                                                              ws - 1 - b);
            Tensor<double> contrib = testutil::correlate_oracle(rmap, flipped);
            for (int p = 0; p < H * W; ++p) expect[c * H * W + p] += contrib[p];
        }
    }
    CHECK(max_abs_diff(out.value(), expect) < 1e-12);
}

TEST_CASE("feature_fusion with zero f_R and zero h biases reduces to layer norm") {
    Graph<double> g;
    Rng rng(58);
    int c = 3;
    Var<double> f_pq = g.leaf(random_tensor<double>({c, 4, 4}, rng));
    Var<double> f_r = g.leaf(Tensor<double>(Shape{c, 4, 4}));
    FusionVars<double> fuse = random_fusion<double>(g, c, rng, /*zero=*/true);
    Var<double> out = feature_fusion(f_pq, f_r, fuse, 0.0, 0.01, Mode::eval);
    Var<double> expect = layer_norm(f_pq, fuse.ln2_gamma, fuse.ln2_beta);
    CHECK(max_abs_diff(out.value(), expect.value()) < 1e-12);
}

TEST_CASE("feature_fusion output shape and gradient flow to both inputs") {
    Rng rng(59);
    int c = 2;
    Tensor<double> f_pq = random_tensor<double>({c, 4, 4}, rng);
    Tensor<double> f_r = random_tensor<double>({c, 4, 4}, rng);
    Tensor<double> w = random_tensor<double>({c, 4, 4}, rng);
    double err = grad_check<double>(
        [&](Graph<double>& g, const std::vector<Var<double>>& in) {
            Rng local(60);
            FusionVars<double> fuse = random_fusion<double>(g, c, local);
            return weighted_sum(feature_fusion(in[0], in[1], fuse, 0.0, 0.01, Mode::eval), w);
        },
        {f_pq, f_r});
    CHECK(err < 1e-3);
}

TEST_CASE("rfe_block end-to-end gradient (projection, scores, aggregation, fusion)") {
    Rng rng(63);
    int k = 3, c = 4;
    Tensor<double> feat = random_tensor<double>({k, 8, 8}, rng);
    Tensor<double> proj_w = random_tensor<double>({c, k, 1, 1}, rng, -0.4, 0.4);
    Tensor<double> proj_b = random_tensor<double>({c}, rng, -0.1, 0.1);
    Tensor<double> h1_w = random_tensor<double>({c, c, 3, 3}, rng, -0.2, 0.2);
    Tensor<double> fuse_w = random_tensor<double>({1}, rng, 0.5, 1.0);
    std::vector<BoundingBox> boxes = {BoundingBox{3, 3, 6, 6}, BoundingBox{8, 6, 6, 7}};
    Tensor<double> w = random_tensor<double>({c, 8, 8}, rng);
    GradCheckOptions opt;
    opt.max_elems = 10;
    double err = grad_check<double>(
        [&](Graph<double>& g, const std::vector<Var<double>>& in) {
            RfeBlockVars<double> b;
            b.proj.conv_w = in[1];
            b.proj.conv_b = in[2];
            b.proj.ln_gamma = g.leaf(Tensor<double>::full(Shape{c}, 1.0));
            b.proj.ln_beta = g.leaf(Tensor<double>(Shape{c}));
            b.fuse.proj_w = in[4];
            b.fuse.proj_b = g.leaf(Tensor<double>(Shape{1}));
            b.fuse.ln1_gamma = g.leaf(Tensor<double>::full(Shape{c}, 1.0));
            b.fuse.ln1_beta = g.leaf(Tensor<double>(Shape{c}));
            b.fuse.h1_w = in[3];
            b.fuse.h1_b = g.leaf(Tensor<double>(Shape{c}));
            b.fuse.h2_w = g.leaf(Tensor<double>::full(Shape{c, c, 3, 3}, 0.05));
            b.fuse.h2_b = g.leaf(Tensor<double>(Shape{c}));
            b.fuse.ln2_gamma = g.leaf(Tensor<double>::full(Shape{c}, 1.0));
            b.fuse.ln2_beta = g.leaf(Tensor<double>(Shape{c}));
            RfeConfig<double> cfg;
            cfg.scales = {1.0};
            cfg.dropout_p = 0.0;
            RfeResult<double> r = rfe_block(in[0], boxes, b, cfg, Mode::eval);
            return weighted_sum(r.enhanced, w);
        },
        {feat, proj_w, proj_b, h1_w, fuse_w}, opt);
    CHECK(err < 1e-3);
}

TEST_CASE("rfe_block and rfe_stack") {
    Rng rng(61);
    int k = 3, c = 4;
    auto build_blocks = [&](Graph<double>& g, int n) {
        Rng local(62);
        std::vector<RfeBlockVars<double>> blocks;
        for (int j = 0; j < n; ++j) {
            RfeBlockVars<double> b;
            b.proj = identityless_projection<double>(g, c, j == 0 ? k : c, local);
            b.fuse = random_fusion<double>(g, c, local);
            blocks.push_back(b);
        }
        return blocks;
    };
    Tensor<double> feat = random_tensor<double>({k, 12, 12}, rng);
    std::vector<BoundingBox> boxes = {BoundingBox{4, 4, 8, 8}, BoundingBox{12, 10, 8, 10}};
    RfeConfig<double> cfg;
    cfg.scales = {1.0};
    cfg.dropout_p = 0.0;

    SUBCASE("N=1 stack equals a single block application") {
        Graph<double> g;
        auto blocks = build_blocks(g, 1);
        RfeResult<double> stacked = rfe_stack(g.leaf(feat), boxes, blocks, cfg, Mode::eval);
        RfeResult<double> single = rfe_block(g.leaf(feat), boxes, blocks[0], cfg, Mode::eval);
        CHECK(max_abs_diff(stacked.enhanced.value(), single.enhanced.value()) == 0.0);
        CHECK(max_abs_diff(stacked.scores.value(), single.scores.value()) == 0.0);
    }
    SUBCASE("spatial dims stay fixed across stacked blocks") {
        for (int n : {1, 2, 4}) {
            Graph<double> g;
            auto blocks = build_blocks(g, n);
            RfeResult<double> r = rfe_stack(g.leaf(feat), boxes, blocks, cfg, Mode::eval);
            CHECK(r.enhanced.shape() == Shape{c, 12, 12});
            CHECK(r.scores.shape() == Shape{2, 1, 12, 12});
        }
    }
    SUBCASE("three scales widen the exemplar axis of R") {
        Graph<double> g;
        RfeConfig<double> cfg3 = cfg;
        cfg3.scales = {1.0, 0.9, 1.1};
        auto blocks = build_blocks(g, 2);
        RfeResult<double> r = rfe_stack(g.leaf(feat), boxes, blocks, cfg3, Mode::eval);
        CHECK(r.scores.shape() == Shape{6, 1, 12, 12});
        CHECK(r.enhanced.shape() == Shape{c, 12, 12});
    }
    SUBCASE("empty stack errors") {
        Graph<double> g;
        CHECK_THROWS_AS(
            rfe_stack(g.leaf(feat), boxes, std::vector<RfeBlockVars<double>>{}, cfg, Mode::eval),
            ConfigError);
    }
}
