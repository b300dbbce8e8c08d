#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"

using namespace a3fpn;
using namespace a3fpn::infoflow;

TEST_CASE("mutual_information: independence, identity, BSC closed form") {
    CHECK(mutual_information({{0.25, 0.25}, {0.25, 0.25}}) == Catch::Approx(0.0).margin(1e-12));
    CHECK(mutual_information({{0.5, 0.0}, {0.0, 0.5}}) == Catch::Approx(1.0).margin(1e-12));
    const double expect = 1.0 - binary_entropy(0.1);
    CHECK(mutual_information(joint_from({0.5, 0.5}, bsc(0.1))) == Catch::Approx(expect).margin(1e-12));
    CHECK(expect == Catch::Approx(0.5310).margin(1e-4));
    CHECK_THROWS_AS(mutual_information({{0.5, -0.1}, {0.3, 0.3}}), UsageError);
    CHECK_THROWS_AS(mutual_information({{0.5, 0.1}, {0.3, 0.3}}), UsageError);
}

TEST_CASE("chain_mi: zero hops give the source entropy") {
    ChannelDist src;
    src.k = 3;
    src.marginal = {0.2, 0.3, 0.5};
    src.transition = identity_channel(3);
    CHECK(chain_mi(src, {}) == Catch::Approx(entropy(src.marginal)).margin(1e-12));
}

TEST_CASE("chain_mi: two BSC(0.1) hops compose to BSC(0.18)") {
    // closed-form oracle: flip probability 2p(1-p) = 0.18, I = 1 - H_b(0.18)
    const double composed_p = 2.0 * 0.1 * 0.9;
    CHECK(composed_p == Catch::Approx(0.18).margin(1e-15));
    const double expect = 1.0 - binary_entropy(composed_p);
    const double got = chain_mi(uniform_binary_source(), {bsc(0.1), bsc(0.1)});
    CHECK(got == Catch::Approx(expect).margin(1e-12));
    CHECK(got == Catch::Approx(0.319922).margin(1e-5));
}

TEST_CASE("chain_mi: an all-rows-equal hop erases everything") {
    ChannelDist src;
    src.k = 2;
    src.marginal = {0.3, 0.7};
    src.transition = identity_channel(2);
    Mat erase = {{0.4, 0.6}, {0.4, 0.6}};
    CHECK(chain_mi(src, {bsc(0.05), erase, bsc(0.2)}) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("chain_mi equals mutual_information of the marginalized joint") {
    Rng rng(100);
    for (int trial = 0; trial < 50; ++trial) {
        const int k = 2 + static_cast<int>(rng.below(7));
        ChannelDist src;
        src.k = k;
        src.marginal = random_marginal(k, rng);
        src.transition = identity_channel(k);
        std::vector<Mat> hops;
        const int n = 1 + static_cast<int>(rng.below(4));
        for (int i = 0; i < n; ++i) hops.push_back(random_transition(k, rng));
        Mat t = identity_channel(k);
        for (const Mat& h : hops) t = compose(t, h);
        CHECK(chain_mi(src, hops) ==
              Catch::Approx(mutual_information(joint_from(src.marginal, t))).margin(1e-10));
        // composed tables stay normalized
        double total = 0.0;
        for (const Vec& row : joint_from(src.marginal, t))
            for (double v : row) total += v;
        CHECK(std::abs(total - 1.0) <= 1e-9);
    }
}

TEST_CASE("check_contraction: BSC bounds from known contraction coefficients") {
    {
        ContractionReport r = check_contraction(uniform_binary_source(), {bsc(0.1)}, {bsc_eta(0.1)});
        CHECK(r.info_bits == Catch::Approx(0.5310).margin(1e-4));
        CHECK(r.bound_bits == Catch::Approx(0.64).margin(1e-12));
        CHECK(r.pass);
    }
    {
        ContractionReport r = check_contraction(uniform_binary_source(), {bsc(0.1), bsc(0.1)},
                                                {bsc_eta(0.1), bsc_eta(0.1)});
        CHECK(r.info_bits == Catch::Approx(0.3199).margin(1e-4));
        CHECK(r.bound_bits == Catch::Approx(0.4096).margin(1e-12));
        CHECK(r.pass);
    }
    {
        // noiseless: equality I = H = bound
        ContractionReport r = check_contraction(uniform_binary_source(), {bsc(0.0)}, {bsc_eta(0.0)});
        CHECK(r.info_bits == Catch::Approx(1.0).margin(1e-12));
        CHECK(r.bound_bits == Catch::Approx(1.0).margin(1e-12));
        CHECK(r.pass);
    }
    CHECK_THROWS_AS(check_contraction(uniform_binary_source(), {bsc(0.1)}, {1.5}), UsageError);
    CHECK_THROWS_AS(check_contraction(uniform_binary_source(), {bsc(0.1)}, {}), UsageError);
}

TEST_CASE("BSC chains never violate the contraction bound") {
    Rng rng(101);
    for (int trial = 0; trial < 200; ++trial) {
        const double p = 0.5 * rng.uniform();
        const int n = 1 + static_cast<int>(rng.below(5));
        std::vector<Mat> hops(static_cast<std::size_t>(n), bsc(p));
        Vec etas(static_cast<std::size_t>(n), bsc_eta(p));
        CHECK(check_contraction(uniform_binary_source(), hops, etas).pass);
    }
}

TEST_CASE("data processing inequality: I is non-increasing along random chains") {
    Rng rng(102);
    for (int trial = 0; trial < 300; ++trial) {
        const int k = 2 + static_cast<int>(rng.below(7));
        ChannelDist src;
        src.k = k;
        src.marginal = random_marginal(k, rng);
        src.transition = identity_channel(k);
        std::vector<Mat> hops;
        const int n = 1 + static_cast<int>(rng.below(5));
        for (int i = 0; i < n; ++i) hops.push_back(random_transition(k, rng));
        const Vec prefix = chain_prefix_mi(src, hops);
        for (std::size_t i = 1; i < prefix.size(); ++i) CHECK(prefix[i] <= prefix[i - 1] + 1e-9);
    }
}

TEST_CASE("topology_hops: layer-wise chain, global, and level bounds") {
    TopologyGraph fpn = layerwise_graph(4);
    CHECK(topology_hops(fpn, 4, 1) == 3);
    CHECK(topology_hops(fpn, 4, 3) == 1);
    CHECK(!topology_hops(fpn, 1, 4).has_value()); // unreachable in a top-down chain
    CHECK(topology_hops(fpn, 2, 2) == 0);

    TopologyGraph glob = global_graph(4);
    for (int a = 1; a <= 4; ++a)
        for (int b = 1; b <= 4; ++b)
            if (a != b) CHECK(topology_hops(glob, a, b) == 1);

    CHECK_THROWS_AS(topology_hops(fpn, 0, 1), UsageError);
}

TEST_CASE("asymptotic topology: reachability and strictly smaller max hops") {
    PyramidConfig cfg;
    cfg.n_levels = 4;
    cfg.channels = {16, 16, 16, 16};
    cfg.columns = 3;
    cfg.squeeze = {1, 1, 1, 1};
    cfg.use_resampling = {true, true, true};
    cfg.compress_channels = {4, 4, 4, 4};
    cfg.gn_groups = {2, 2, 2, 2};
    cfg.resample_groups = {2, 2, 2, 2};
    TopologyGraph asym = asymptotic_graph(cfg);
    for (int a = 1; a <= 4; ++a)
        for (int b = 1; b <= 4; ++b) CHECK(instance_reachable(asym, a, b));
    auto asym_max = max_pairwise_hops(asym);
    REQUIRE(asym_max.has_value());
    auto fpn_top_bottom = topology_hops(layerwise_graph(4), 4, 1);
    REQUIRE(fpn_top_bottom.has_value());
    CHECK(*asym_max < *fpn_top_bottom);
    CHECK(*asym_max <= *topology_hops(layerwise_graph(4), 4, 1)); // shorter-path structural bound
}
