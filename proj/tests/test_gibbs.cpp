#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "mfdlm/common.hpp"
#include "mfdlm/gibbs.hpp"
#include "testutil.hpp"

using namespace mfdlm;

namespace {

SynthSpec trend_spec(int C, int K, int T, std::uint64_t seed, double noise = 0.01) {
    SynthSpec spec;
    spec.C = C;
    spec.K = K;
    spec.T = T;
    spec.M = 8;
    spec.m_per_time = 18;
    spec.seed = seed;
    spec.psi = Eigen::MatrixXd::Constant(K, C, 0.5);
    spec.gamma = Eigen::MatrixXd::Constant(K, C, 0.4);
    spec.gamma.col(0).setZero();
    spec.sigma2 = Eigen::VectorXd::Constant(C, noise);
    return spec;
}

FitConfig small_config(int K, int iters, int burn, std::uint64_t seed) {
    FitConfig cfg;
    cfg.K = K;
    cfg.M = 8;
    cfg.iterations = iters;
    cfg.burnin = burn;
    cfg.seed = seed;
    cfg.progress_every = 0;
    cfg.monitor = {"lambda", "gamma", "psi", "sigma2", "d", "deviance"};
    return cfg;
}

}  // namespace

TEST_CASE("initialization: SVD recovery, orthonormal loadings, small residual") {
    auto [data, truth] = generate_synthetic(trend_spec(2, 2, 40, 4, 0.0));
    FitConfig cfg = small_config(2, 20, 10, 1);

    Fitter fitter(data, cfg);
    fitter.init();

    // initialized curves are J-orthonormal
    const Eigen::MatrixXd gram = fitter.state().flc.d[0].transpose() * fitter.basis().gram() *
                                 fitter.state().flc.d[0];
    CHECK((gram - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-8);

    // noiseless rank-2 data: the completed-grid SVD truncation is exact, and
    // the Euclidean loadings are orthonormal (oracle SVD in-test)
    Eigen::MatrixXd stacked(2 * 40, 18);
    for (int c = 0; c < 2; ++c)
        for (int t = 0; t < 40; ++t)
            stacked.row(c * 40 + t) = data.outcomes[static_cast<std::size_t>(c)]
                                          [static_cast<std::size_t>(t)].y.transpose();
    Eigen::BDCSVD<Eigen::MatrixXd> svd(stacked, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::MatrixXd rank2 = svd.matrixU().leftCols(2) *
                                  svd.singularValues().head(2).asDiagonal() *
                                  svd.matrixV().leftCols(2).transpose();
    CHECK((stacked - rank2).norm() < 1e-8 * stacked.norm());
    const Eigen::MatrixXd vtv = svd.matrixV().leftCols(2).transpose() * svd.matrixV().leftCols(2);
    CHECK((vtv - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-12);

    // the fitted observation-level residual is small after initialization
    double ssr = 0.0, total = 0.0;
    const int K = 2;
    for (int c = 0; c < 2; ++c) {
        for (const auto& rec : data.outcomes[static_cast<std::size_t>(c)]) {
            Eigen::VectorXd mapped(rec.tau.size());
            for (Eigen::Index i = 0; i < rec.tau.size(); ++i)
                mapped[i] = fitter.cache().map_tau(rec.tau[i]);
            const Eigen::MatrixXd phi = fitter.basis().evaluate_matrix(mapped);
            const Eigen::VectorXd mu =
                phi * fitter.state().flc.d[0] *
                fitter.state().beta.block(c * K, rec.time - 1, K, 1);
            ssr += (rec.y - mu).squaredNorm();
            total += rec.y.squaredNorm();
        }
    }
    CHECK(ssr < 1e-4 * total);

    // requesting more factors than the data rank fails loudly
    FitConfig too_many = small_config(12, 20, 10, 1);
    Fitter f2(data, too_many);
    CHECK_THROWS_AS(f2.init(), data_error);
}

TEST_CASE("K-range heuristic") {
    // exact rank-2 data after centering
    auto [data, truth] = generate_synthetic(trend_spec(1, 2, 50, 9, 0.0));
    const KRange range = suggest_k_range(data, 0.80, 0.99);
    CHECK(range.k_min == 2);
    CHECK(range.k_max == 2);
    CHECK(range.note.find("centering") != std::string::npos);

    // noisy data: cumulative fractions match an in-test SVD oracle
    auto [noisy, truth2] = generate_synthetic(trend_spec(1, 2, 50, 9, 0.5));
    Eigen::MatrixXd mat(50, 18);
    for (int t = 0; t < 50; ++t)
        mat.row(t) = noisy.outcomes[0][static_cast<std::size_t>(t)].y.transpose();
    mat.rowwise() -= mat.colwise().mean();
    Eigen::BDCSVD<Eigen::MatrixXd> svd(mat);
    const Eigen::VectorXd sq = svd.singularValues().array().square();
    double cum = 0.0;
    int k_min_oracle = 0, k_max_oracle = 0;
    for (int k = 0; k < sq.size(); ++k) {
        cum += sq[k] / sq.sum();
        if (!k_min_oracle && cum >= 0.80 - 1e-12) k_min_oracle = k + 1;
        if (!k_max_oracle && cum >= 0.99 - 1e-12) {
            k_max_oracle = k + 1;
            break;
        }
    }
    const KRange noisy_range = suggest_k_range(noisy, 0.80, 0.99);
    CHECK(noisy_range.k_min == k_min_oracle);
    CHECK(noisy_range.k_max == k_max_oracle);
}

TEST_CASE("zero retained iterations give an empty chain with the config echoed") {
    auto [data, truth] = generate_synthetic(trend_spec(2, 2, 20, 5));
    FitConfig cfg = small_config(2, 15, 15, 2);
    const Chain chain = fit(data, cfg);
    CHECK(chain.num_draws() == 0);
    CHECK(chain.manifest["config"]["K"] == 2);
    CHECK(chain.manifest["config"]["model"] == "common-trend");
    CHECK(chain.iterations == 15);
    // the manifest's config snapshot re-parses to an equivalent config
    const FitConfig reparsed = FitConfig::from_json(chain.manifest["config"]);
    CHECK(reparsed.to_json() == cfg.to_json());
}

TEST_CASE("determinism: same seed, config, and data give identical chains") {
    auto [data, truth] = generate_synthetic(trend_spec(2, 2, 30, 6));
    FitConfig cfg = small_config(2, 40, 15, 77);
    const Chain a = fit(data, cfg);
    const Chain b = fit(data, cfg);
    for (const auto& [name, series] : a.series) {
        REQUIRE(b.has(name));
        CHECK((series.draws - b.at(name).draws).cwiseAbs().maxCoeff() == 0.0);
    }
    CHECK((a.mean_beta - b.mean_beta).cwiseAbs().maxCoeff() == 0.0);

    FitConfig other_seed = cfg;
    other_seed.seed = 78;
    const Chain c = fit(data, other_seed);
    CHECK((a.at("lambda").draws - c.at("lambda").draws).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("threaded variance block reproduces the serial stream assignment") {
    auto [data, truth] = generate_synthetic(trend_spec(2, 2, 25, 16));
    FitConfig serial = small_config(2, 25, 10, 5);
    serial.sv = true;
    serial.monitor = {"lambda", "sigma2", "sv_xi1", "d"};
    FitConfig threaded = serial;
    threaded.threads = 2;
    const Chain a = fit(data, serial);
    const Chain b = fit(data, threaded);
    CHECK((a.at("sv_xi1").draws - b.at("sv_xi1").draws).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.at("d").draws - b.at("d").draws).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("every retained draw is orthonormal with ordered lambda") {
    auto [data, truth] = generate_synthetic(trend_spec(2, 3, 30, 7));
    FitConfig cfg = small_config(3, 60, 20, 3);
    Fitter fitter(data, cfg);
    const Chain chain = fitter.run();
    const Eigen::MatrixXd& J = fitter.basis().gram();
    const int p = fitter.basis().dim();

    const ChainSeries& d = chain.at("d");
    const ChainSeries& lambda = chain.at("lambda");
    for (Eigen::Index r = 0; r < d.draws.rows(); ++r) {
        Eigen::MatrixXd dm(p, 3);
        for (int k = 0; k < 3; ++k)
            for (int j = 0; j < p; ++j) dm(j, k) = d.draws(r, k * p + j);
        const Eigen::MatrixXd gram = dm.transpose() * J * dm;
        CHECK((gram - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-8);
        CHECK(lambda.draws(r, 0) > lambda.draws(r, 1));
        CHECK(lambda.draws(r, 1) > lambda.draws(r, 2));
    }
}

TEST_CASE("checkpoint and resume reproduce the uninterrupted chain") {
    auto [data, truth] = generate_synthetic(trend_spec(2, 2, 25, 8));
    FitConfig cfg = small_config(2, 40, 10, 9);

    const Chain straight = fit(data, cfg);

    nlohmann::json snapshot;
    {
        FitConfig half = cfg;
        half.checkpoint_every = 20;
        Fitter fitter(data, half);
        fitter.on_checkpoint = [&](const Fitter& f) {
            if (f.state().iteration == 20) snapshot = f.checkpoint_json();
        };
        (void)fitter.run();
        REQUIRE(!snapshot.is_null());
    }
    {
        FitConfig half = cfg;
        half.checkpoint_every = 20;
        Fitter resumed(data, half);
        resumed.restore(snapshot);
        CHECK(resumed.state().iteration == 20);
        const Chain chain = resumed.run();
        for (const auto& [name, series] : straight.series) {
            REQUIRE(chain.has(name));
            INFO("series ", name);
            CHECK((series.draws - chain.at(name).draws).cwiseAbs().maxCoeff() == 0.0);
        }
    }

    // a mismatched config is rejected on restore
    FitConfig other = cfg;
    other.K = 1;
    Fitter wrong(data, other);
    CHECK_THROWS_AS(wrong.restore(snapshot), data_error);
}

TEST_CASE("hidden Markov model variant runs and nests the common trend") {
    auto [data, truth] = generate_synthetic(trend_spec(2, 2, 40, 10));
    FitConfig cfg = small_config(2, 40, 20, 12);
    cfg.model = ModelKind::CommonTrendHmm;
    cfg.monitor = {"gamma", "psi", "q01", "q10", "sigma2"};
    const Chain chain = fit(data, cfg);
    CHECK(chain.num_draws() == 20);
    CHECK(chain.at("q01").draws.minCoeff() > 0.0);
    CHECK(chain.at("q01").draws.maxCoeff() < 1.0);
}

TEST_CASE("random-walk model runs with trial-wise factor draws") {
    SynthSpec spec;
    spec.C = 2;
    spec.K = 2;
    spec.M = 6;
    spec.m_per_time = 12;
    spec.kind = SynthKind::RandomWalk;
    spec.walk = {2, 3, 5};
    spec.seed = 21;
    spec.sigma2 = Eigen::VectorXd::Constant(2, 0.02);
    auto [data, truth] = generate_synthetic(spec);

    FitConfig cfg;
    cfg.K = 2;
    cfg.M = 6;
    cfg.model = ModelKind::RandomWalk;
    cfg.walk = {2, 3, 5};
    cfg.iterations = 30;
    cfg.burnin = 10;
    cfg.seed = 4;
    cfg.progress_every = 0;
    cfg.monitor = {"lambda", "sigma2", "W", "d", "beta", "deviance"};
    const Chain chain = fit(data, cfg);
    CHECK(chain.num_draws() == 20);
    // W draws are symmetric PD
    const ChainSeries& W = chain.at("W");
    for (Eigen::Index r = 0; r < W.draws.rows(); ++r) {
        Eigen::MatrixXd Wk(2, 2);
        Wk << W.draws(r, 0), W.draws(r, 1), W.draws(r, 2), W.draws(r, 3);
        CHECK(std::abs(Wk(0, 1) - Wk(1, 0)) < 1e-12);
        CHECK(Eigen::LLT<Eigen::MatrixXd>(Wk).info() == Eigen::Success);
    }

    // wrong replication shape is rejected
    FitConfig bad = cfg;
    bad.walk = {2, 3, 4};
    CHECK_THROWS_AS(Fitter(data, bad), data_error);
}

TEST_CASE("per-factor stochastic volatility toggle") {
    auto [data, truth] = generate_synthetic(trend_spec(2, 2, 30, 23));
    FitConfig cfg = small_config(2, 30, 10, 6);
    cfg.sv = true;
    cfg.sv_factors = {1};  // factor 1 has SV, factor 2 stays at constant variance
    cfg.monitor = {"sigma2_innov", "sv_xi1", "lambda", "d"};
    Fitter fitter(data, cfg);
    const Chain chain = fitter.run();

    // the constant-variance factor keeps refreshing sigma2_innov ...
    const ChainSeries& innov = chain.at("sigma2_innov");
    const Eigen::VectorXd k2_draws = innov.draws.col(2);  // (k=2, c=1)
    CHECK((k2_draws.array() - k2_draws[0]).abs().maxCoeff() > 0.0);
    // ... while the SV factor's xi1 moves and its h path feeds the filter
    const ChainSeries& xi1 = chain.at("sv_xi1");
    CHECK((xi1.draws.col(0).array() - xi1.draws(0, 0)).abs().maxCoeff() > 0.0);

    FitConfig bad = cfg;
    bad.sv = false;
    CHECK_THROWS_AS(bad.validate(), data_error);
    bad = cfg;
    bad.sv_factors = {3};
    CHECK_THROWS_AS(bad.validate(), data_error);
}

TEST_CASE("config validation catches the documented misuses") {
    FitConfig cfg;
    cfg.K = 0;
    CHECK_THROWS_AS(cfg.validate(), data_error);
    cfg = FitConfig{};
    cfg.burnin = cfg.iterations + 1;
    CHECK_THROWS_AS(cfg.validate(), data_error);
    cfg = FitConfig{};
    cfg.monitor = {"nonsense"};
    CHECK_THROWS_AS(cfg.validate(), data_error);
    cfg = FitConfig{};
    cfg.monitor = {"W"};  // walk-only series on a trend model
    CHECK_THROWS_AS(cfg.validate(), data_error);
    cfg = FitConfig{};
    cfg.K_linked = 5;
    CHECK_THROWS_AS(cfg.validate(), data_error);

    // config JSON round trip
    cfg = FitConfig{};
    cfg.K = 3;
    cfg.sv = true;
    cfg.monitor = {"lambda", "sv_xi1"};
    cfg.priors.hmm_a = 2.0;
    const FitConfig back = FitConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
}
