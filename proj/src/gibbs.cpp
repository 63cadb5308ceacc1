#include "mfdlm/gibbs.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <mutex>
#include <ostream>
#include <thread>

#include "mfdlm/cgls.hpp"
#include "mfdlm/common.hpp"
#include "mfdlm/ssm.hpp"

namespace mfdlm {

namespace {

// ---------------------------------------------------------------------------
// small utilities

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    threads = std::clamp(threads, 1, n);
    if (threads <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w) {
        pool.emplace_back([&, w]() {
            try {
                for (int i = w; i < n; i += threads) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

// Natural cubic spline interpolation with linear extension outside the
// observed range; degenerates gracefully for 1 or 2 support points.
Eigen::VectorXd natural_cubic_interp(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                     const Eigen::VectorXd& q) {
    const int n = static_cast<int>(x.size());
    Eigen::VectorXd out(q.size());
    if (n == 1) {
        out.setConstant(y[0]);
        return out;
    }

    Eigen::VectorXd m = Eigen::VectorXd::Zero(n);  // second derivatives
    if (n > 2) {
        const int sys = n - 2;
        Eigen::VectorXd diag(sys), off(sys), rhs(sys);
        for (int i = 0; i < sys; ++i) {
            const double h0 = x[i + 1] - x[i];
            const double h1 = x[i + 2] - x[i + 1];
            diag[i] = 2.0 * (h0 + h1);
            off[i] = h1;
            rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h1 - (y[i + 1] - y[i]) / h0);
        }
        // Thomas algorithm (symmetric tridiagonal).
        for (int i = 1; i < sys; ++i) {
            const double w = off[i - 1] / diag[i - 1];
            diag[i] -= w * off[i - 1];
            rhs[i] -= w * rhs[i - 1];
        }
        m[sys] = rhs[sys - 1] / diag[sys - 1];
        for (int i = sys - 2; i >= 0; --i) m[i + 1] = (rhs[i] - off[i] * m[i + 2]) / diag[i];
    }

    auto eval_segment = [&](int i, double t) {
        const double h = x[i + 1] - x[i];
        const double A = (x[i + 1] - t) / h;
        const double B = (t - x[i]) / h;
        return A * y[i] + B * y[i + 1] +
               ((A * A * A - A) * m[i] + (B * B * B - B) * m[i + 1]) * h * h / 6.0;
    };
    const double slope_lo = (y[1] - y[0]) / (x[1] - x[0]) - (x[1] - x[0]) * m[1] / 6.0;
    const double hn = x[n - 1] - x[n - 2];
    const double slope_hi = (y[n - 1] - y[n - 2]) / hn + hn * m[n - 2] / 6.0;

    for (Eigen::Index j = 0; j < q.size(); ++j) {
        const double t = q[j];
        if (t <= x[0]) {
            out[j] = y[0] + slope_lo * (t - x[0]);
        } else if (t >= x[n - 1]) {
            out[j] = y[n - 1] + slope_hi * (t - x[n - 1]);
        } else {
            int i = static_cast<int>(std::upper_bound(x.data(), x.data() + n, t) - x.data()) - 1;
            i = std::clamp(i, 0, n - 2);
            out[j] = eval_segment(i, t);
        }
    }
    return out;
}

struct Completed {
    Eigen::VectorXd grid;                      // data-domain points
    std::vector<Eigen::MatrixXd> per_outcome;  // T_c x G, row order follows data records
};

Completed complete_to_grid(const FunctionalDataset& data, int max_grid) {
    Completed comp;
    std::vector<double> pooled = data.pooled_points();
    if (max_grid > 1 && static_cast<int>(pooled.size()) > max_grid) {
        std::vector<double> sub(static_cast<std::size_t>(max_grid));
        for (int i = 0; i < max_grid; ++i) {
            const double pos = static_cast<double>(i) * (pooled.size() - 1) / (max_grid - 1);
            sub[static_cast<std::size_t>(i)] = pooled[static_cast<std::size_t>(std::lround(pos))];
        }
        sub.erase(std::unique(sub.begin(), sub.end()), sub.end());
        pooled = std::move(sub);
    }
    comp.grid = Eigen::Map<const Eigen::VectorXd>(pooled.data(),
                                                  static_cast<Eigen::Index>(pooled.size()));
    for (const auto& recs : data.outcomes) {
        Eigen::MatrixXd m(static_cast<Eigen::Index>(recs.size()), comp.grid.size());
        for (std::size_t r = 0; r < recs.size(); ++r)
            m.row(static_cast<Eigen::Index>(r)) =
                natural_cubic_interp(recs[r].tau, recs[r].y, comp.grid).transpose();
        comp.per_outcome.push_back(std::move(m));
    }
    return comp;
}

void fix_svd_signs(Eigen::MatrixXd& U, Eigen::MatrixXd& V) {
    for (Eigen::Index k = 0; k < V.cols(); ++k) {
        int arg_max = 0;
        V.col(k).cwiseAbs().maxCoeff(&arg_max);
        if (V(arg_max, k) < 0.0) {
            V.col(k) = -V.col(k);
            if (k < U.cols()) U.col(k) = -U.col(k);
        }
    }
}

template <typename Derived>
nlohmann::json matrix_to_json(const Eigen::MatrixBase<Derived>& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
    const auto rows = j.get<std::vector<std::vector<double>>>();
    Eigen::MatrixXd m(rows.size(), rows.empty() ? 0 : rows[0].size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != static_cast<std::size_t>(m.cols()))
            throw data_error("checkpoint: ragged matrix");
        for (std::size_t c = 0; c < rows[r].size(); ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
    return m;
}

Eigen::MatrixXi int_matrix_from_json(const nlohmann::json& j) {
    return matrix_from_json(j).cast<int>();
}

constexpr double kLog2Pi = 1.8378770664093454836;

// RNG path block ids.
enum : std::uint64_t { kBlockInit = 0, kBlockFlc = 1, kBlockFactors = 2, kBlockTrend = 3,
                       kBlockObsVar = 4, kBlockVol = 5 };

}  // namespace

// ---------------------------------------------------------------------------
// config

std::string to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::CommonTrend: return "common-trend";
        case ModelKind::CommonTrendHmm: return "common-trend-hmm";
        case ModelKind::RandomWalk: return "random-walk";
    }
    return "unknown";
}

ModelKind model_kind_from_string(const std::string& s) {
    if (s == "common-trend") return ModelKind::CommonTrend;
    if (s == "common-trend-hmm") return ModelKind::CommonTrendHmm;
    if (s == "random-walk") return ModelKind::RandomWalk;
    throw data_error("unknown model kind '" + s + "'");
}

void FitConfig::validate() const {
    if (K < 1) throw data_error("config: K must be >= 1");
    if (M < 1) throw data_error("config: M must be >= 1");
    if (!(burnin >= 0 && burnin <= iterations))
        throw data_error("config: requires 0 <= burn-in <= iterations");
    if (K_linked >= 0 && (K_linked < 1 || K_linked > K))
        throw data_error("config: requires 1 <= K_linked <= K");
    if (model == ModelKind::RandomWalk) {
        if (walk.units < 1 || walk.trials < 1 || walk.bins < 1)
            throw data_error("config: random-walk model needs walk.units/trials/bins");
        if (walk.bins < 2) throw data_error("config: random-walk model needs >= 2 bins per trial");
        if (!common_flc)
            throw data_error("config: random-walk model requires common factor loading curves");
        if (sv) throw data_error("config: stochastic volatility applies to the trend models only");
    }
    if (threads < 1) throw data_error("config: threads must be >= 1");
    if (!sv_factors.empty()) {
        if (!sv) throw data_error("config: sv_factors requires sv = true");
        for (int k : sv_factors)
            if (k < 1 || k > K) throw data_error("config: sv_factors entries must lie in 1..K");
    }
    const std::vector<std::string> known = {"lambda", "d",  "gamma",  "psi",        "sigma2",
                                            "sigma2_innov", "sv_xi0", "sv_xi1",     "sv_sigma2h",
                                            "h",            "q01",    "q10",        "W",
                                            "beta",         "deviance", "resid2"};
    for (const auto& m : monitor) {
        if (std::find(known.begin(), known.end(), m) == known.end())
            throw data_error("config: unknown monitored quantity '" + m + "'");
        const bool trend = model != ModelKind::RandomWalk;
        if ((m == "gamma" || m == "psi" || m == "resid2") && !trend)
            throw data_error("config: '" + m + "' is not defined for the random-walk model");
        if ((m == "q01" || m == "q10") && model != ModelKind::CommonTrendHmm)
            throw data_error("config: '" + m + "' requires the common-trend-hmm model");
        if (m == "W" && model != ModelKind::RandomWalk)
            throw data_error("config: 'W' requires the random-walk model");
        if ((m == "sv_xi0" || m == "sv_xi1" || m == "sv_sigma2h" || m == "h") && !sv)
            throw data_error("config: '" + m + "' requires sv = true");
        if (m == "sigma2_innov" && !trend)
            throw data_error("config: 'sigma2_innov' requires a trend model");
        if (m == "sigma2_innov" && sv && sv_factors.empty())
            throw data_error("config: 'sigma2_innov' is constant only for factors outside "
                             "sv_factors");
    }
}

nlohmann::json FitConfig::to_json() const {
    nlohmann::json j;
    j["K"] = K;
    j["M"] = M;
    j["common_flc"] = common_flc;
    j["model"] = to_string(model);
    j["K_linked"] = linked();
    j["sv"] = sv;
    if (!sv_factors.empty()) j["sv_factors"] = sv_factors;
    j["iterations"] = iterations;
    j["burnin"] = burnin;
    j["seed"] = seed;
    j["monitor"] = monitor;
    j["knots"] = knot_style == KnotStyle::Quantile ? "quantile" : "equal";
    if (domain) j["domain"] = {domain->first, domain->second};
    j["max_grid_size"] = max_grid_size;
    j["checkpoint_every"] = checkpoint_every;
    j["threads"] = threads;
    j["progress_every"] = progress_every;
    if (model == ModelKind::RandomWalk)
        j["walk"] = {{"units", walk.units}, {"trials", walk.trials}, {"bins", walk.bins}};
    j["priors"] = {{"flc_diffuse_var", priors.flc_diffuse_var},
                   {"sd_upper", priors.sd_upper},
                   {"slope_var", priors.slope_var},
                   {"ar_var", priors.ar_var},
                   {"var_prior_shape", priors.var_prior_shape},
                   {"var_prior_rate", priors.var_prior_rate},
                   {"hmm_a", priors.hmm_a},
                   {"hmm_b", priors.hmm_b},
                   {"wishart_rho", priors.wishart_rho},
                   {"state_prior_var", priors.state_prior_var},
                   {"sv",
                    {{"xi0_var", priors.sv.xi0_var},
                     {"beta_a", priors.sv.beta_a},
                     {"beta_b", priors.sv.beta_b},
                     {"sigma_h_shape", priors.sv.sigma_h_shape},
                     {"sigma_h_rate", priors.sv.sigma_h_rate}}}};
    return j;
}

FitConfig FitConfig::from_json(const nlohmann::json& j) {
    FitConfig cfg;
    try {
        cfg.K = j.value("K", cfg.K);
        cfg.M = j.value("M", cfg.M);
        cfg.common_flc = j.value("common_flc", cfg.common_flc);
        if (j.contains("model")) cfg.model = model_kind_from_string(j["model"].get<std::string>());
        cfg.K_linked = j.value("K_linked", -1);
        cfg.sv = j.value("sv", cfg.sv);
        if (j.contains("sv_factors"))
            cfg.sv_factors = j["sv_factors"].get<std::vector<int>>();
        cfg.iterations = j.value("iterations", cfg.iterations);
        cfg.burnin = j.value("burnin", cfg.burnin);
        cfg.seed = j.value("seed", cfg.seed);
        if (j.contains("monitor")) cfg.monitor = j["monitor"].get<std::vector<std::string>>();
        if (j.contains("knots")) {
            const std::string ks = j["knots"].get<std::string>();
            if (ks == "quantile") cfg.knot_style = KnotStyle::Quantile;
            else if (ks == "equal") cfg.knot_style = KnotStyle::Equal;
            else throw data_error("config: knots must be 'quantile' or 'equal'");
        }
        if (j.contains("domain")) {
            const auto d = j["domain"].get<std::vector<double>>();
            if (d.size() != 2) throw data_error("config: domain must be [a, b]");
            cfg.domain = std::make_pair(d[0], d[1]);
        }
        cfg.max_grid_size = j.value("max_grid_size", cfg.max_grid_size);
        cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
        cfg.threads = j.value("threads", cfg.threads);
        cfg.progress_every = j.value("progress_every", cfg.progress_every);
        if (j.contains("walk")) {
            cfg.walk.units = j["walk"].value("units", 0);
            cfg.walk.trials = j["walk"].value("trials", 0);
            cfg.walk.bins = j["walk"].value("bins", 0);
        }
        if (j.contains("priors")) {
            const auto& p = j["priors"];
            cfg.priors.flc_diffuse_var = p.value("flc_diffuse_var", cfg.priors.flc_diffuse_var);
            cfg.priors.sd_upper = p.value("sd_upper", cfg.priors.sd_upper);
            cfg.priors.slope_var = p.value("slope_var", cfg.priors.slope_var);
            cfg.priors.ar_var = p.value("ar_var", cfg.priors.ar_var);
            cfg.priors.var_prior_shape = p.value("var_prior_shape", cfg.priors.var_prior_shape);
            cfg.priors.var_prior_rate = p.value("var_prior_rate", cfg.priors.var_prior_rate);
            cfg.priors.hmm_a = p.value("hmm_a", cfg.priors.hmm_a);
            cfg.priors.hmm_b = p.value("hmm_b", cfg.priors.hmm_b);
            cfg.priors.wishart_rho = p.value("wishart_rho", cfg.priors.wishart_rho);
            cfg.priors.state_prior_var = p.value("state_prior_var", cfg.priors.state_prior_var);
            if (p.contains("sv")) {
                const auto& s = p["sv"];
                cfg.priors.sv.xi0_var = s.value("xi0_var", cfg.priors.sv.xi0_var);
                cfg.priors.sv.beta_a = s.value("beta_a", cfg.priors.sv.beta_a);
                cfg.priors.sv.beta_b = s.value("beta_b", cfg.priors.sv.beta_b);
                cfg.priors.sv.sigma_h_shape = s.value("sigma_h_shape", cfg.priors.sv.sigma_h_shape);
                cfg.priors.sv.sigma_h_rate = s.value("sigma_h_rate", cfg.priors.sv.sigma_h_rate);
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw data_error(std::string("config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

FitConfig FitConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw data_error(path + ": invalid JSON: " + std::string(e.what()));
    }
    return from_json(j);
}

// ---------------------------------------------------------------------------
// Fitter

Fitter::Fitter(const FunctionalDataset& data, FitConfig config, std::ostream* log)
    : data_(data), cfg_(std::move(config)), log_(log) {
    cfg_.validate();
    data_.validate();
    if (cfg_.domain) {
        data_.domain_lo = cfg_.domain->first;
        data_.domain_hi = cfg_.domain->second;
        data_.validate();
    }
    if (cfg_.model == ModelKind::RandomWalk && cfg_.walk.total() != data_.max_time())
        throw data_error("config: walk units*trials*bins must equal the data time span");

    // Basis on [0, 1]: observation points are affinely mapped so the diffuse
    // prior on the two unpenalized coordinates has a scale-free meaning.
    std::vector<double> mapped = data_.pooled_points();
    for (double& v : mapped)
        v = (v - data_.domain_lo) / (data_.domain_hi - data_.domain_lo);
    basis_ = SplineBasis::build(place_knots(std::move(mapped), cfg_.M, cfg_.knot_style));
    cache_.emplace(data_, *basis_);

    records_by_time_.assign(static_cast<std::size_t>(cache_->num_times()), {});
    for (int c = 0; c < data_.num_outcomes(); ++c) {
        const auto& recs = cache_->records(c);
        for (std::size_t r = 0; r < recs.size(); ++r)
            records_by_time_[static_cast<std::size_t>(recs[r].time - 1)].emplace_back(
                c, static_cast<int>(r));
    }
    setup_monitors();
}

void Fitter::setup_monitors() {
    const int K = cfg_.K, C = data_.num_outcomes(), T = cache_->num_times();
    const int p = basis_->dim();
    const int G = cfg_.common_flc ? 1 : C;

    auto add = [&](const std::string& name, std::vector<std::string> idx_names,
                   std::vector<std::vector<int>> indices) {
        Monitor m;
        m.skeleton.index_names = std::move(idx_names);
        m.skeleton.indices = std::move(indices);
        monitors_[name] = std::move(m);
    };

    for (const std::string& name : cfg_.monitor) {
        if (name == "lambda") {
            std::vector<std::vector<int>> idx;
            for (int g = 0; g < G; ++g)
                for (int k = 0; k < K; ++k)
                    idx.push_back(cfg_.common_flc ? std::vector<int>{k + 1}
                                                  : std::vector<int>{g + 1, k + 1});
            add(name, cfg_.common_flc ? std::vector<std::string>{"k"}
                                      : std::vector<std::string>{"c", "k"},
                std::move(idx));
        } else if (name == "d") {
            std::vector<std::vector<int>> idx;
            for (int g = 0; g < G; ++g)
                for (int k = 0; k < K; ++k)
                    for (int jj = 0; jj < p; ++jj)
                        idx.push_back(cfg_.common_flc ? std::vector<int>{k + 1, jj + 1}
                                                      : std::vector<int>{g + 1, k + 1, jj + 1});
            add(name, cfg_.common_flc ? std::vector<std::string>{"k", "j"}
                                      : std::vector<std::string>{"c", "k", "j"},
                std::move(idx));
        } else if (name == "gamma") {
            std::vector<std::vector<int>> idx;
            for (int k = 0; k < cfg_.linked(); ++k)
                for (int c = 1; c < C; ++c) idx.push_back({k + 1, c + 1});
            add(name, {"k", "c"}, std::move(idx));
        } else if (name == "psi" || name == "sigma2_innov" || name == "sv_xi0" ||
                   name == "sv_xi1" || name == "sv_sigma2h") {
            std::vector<std::vector<int>> idx;
            for (int k = 0; k < K; ++k)
                for (int c = 0; c < C; ++c) idx.push_back({k + 1, c + 1});
            add(name, {"k", "c"}, std::move(idx));
        } else if (name == "q01" || name == "q10") {
            std::vector<std::vector<int>> idx;
            for (int k = 0; k < cfg_.linked(); ++k)
                for (int c = 1; c < C; ++c) idx.push_back({k + 1, c + 1});
            add(name, {"k", "c"}, std::move(idx));
        } else if (name == "sigma2") {
            std::vector<std::vector<int>> idx;
            for (int c = 0; c < C; ++c) idx.push_back({c + 1});
            add(name, {"c"}, std::move(idx));
        } else if (name == "W") {
            std::vector<std::vector<int>> idx;
            for (int k = 0; k < K; ++k)
                for (int i = 0; i < C; ++i)
                    for (int jj = 0; jj < C; ++jj) idx.push_back({k + 1, i + 1, jj + 1});
            add(name, {"k", "i", "j"}, std::move(idx));
        } else if (name == "beta" || name == "h" || name == "resid2") {
            std::vector<std::vector<int>> idx;
            for (int c = 0; c < C; ++c)
                for (int k = 0; k < K; ++k)
                    for (int t = 0; t < T; ++t) idx.push_back({c + 1, k + 1, t + 1});
            add(name, {"c", "k", "t"}, std::move(idx));
        } else if (name == "deviance") {
            add(name, {}, {std::vector<int>{}});
        }
    }
}

void Fitter::refresh_loading_values() {
    const int G = state_.flc.num_groups();
    fvals_.assign(static_cast<std::size_t>(G), {});
    for (int g = 0; g < G; ++g) {
        fvals_[static_cast<std::size_t>(g)].reserve(cache_->point_sets().size());
        for (const auto& ps : cache_->point_sets())
            fvals_[static_cast<std::size_t>(g)].push_back(
                ps.phi * state_.flc.d[static_cast<std::size_t>(g)]);
    }
}

double Fitter::innovation_variance(int k, int c, int t) const {
    if (cfg_.sv_on(k)) return std::exp(state_.h(c * cfg_.K + k, t));
    return state_.sigma2_innov(k, c);
}

void Fitter::init() {
    const int K = cfg_.K, C = data_.num_outcomes(), T = cache_->num_times();
    const int p = basis_->dim();
    const int G = cfg_.common_flc ? 1 : C;

    const Completed comp = complete_to_grid(data_, cfg_.max_grid_size);
    const Eigen::Index grid_n = comp.grid.size();

    state_ = ModelState{};
    state_.flc.mode = cfg_.common_flc ? FlcMode::Common : FlcMode::PerOutcome;
    state_.flc.d.assign(static_cast<std::size_t>(G), Eigen::MatrixXd::Zero(p, K));
    state_.flc.lambda.assign(static_cast<std::size_t>(G), Eigen::VectorXd::Ones(K));
    state_.beta = Eigen::MatrixXd::Zero(C * K, T);

    Eigen::VectorXd grid_mapped(grid_n);
    for (Eigen::Index i = 0; i < grid_n; ++i) grid_mapped[i] = cache_->map_tau(comp.grid[i]);
    const Eigen::MatrixXd phi_grid = basis_->evaluate_matrix(grid_mapped);
    const Eigen::MatrixXd phi_gram =
        phi_grid.transpose() * phi_grid + 1e-10 * Eigen::MatrixXd::Identity(p, p);
    const Eigen::LLT<Eigen::MatrixXd> phi_llt(phi_gram);

    auto svd_block = [&](const Eigen::MatrixXd& mat, int group) {
        Eigen::BDCSVD<Eigen::MatrixXd> svd(mat, Eigen::ComputeThinU | Eigen::ComputeThinV);
        if (svd.singularValues().size() < K ||
            svd.singularValues()[K - 1] <= 1e-10 * svd.singularValues()[0])
            throw data_error("initialization: K = " + std::to_string(K) +
                             " exceeds the numerical rank of the completed data matrix; "
                             "try a smaller K");
        Eigen::MatrixXd U = svd.matrixU();
        Eigen::MatrixXd V = svd.matrixV();
        fix_svd_signs(U, V);

        // Factor scores by row of the stacked matrix.
        Eigen::Index row = 0;
        const auto assign_rows = [&](int c) {
            const auto& recs = cache_->records(c);
            for (const auto& rec : recs) {
                for (int k = 0; k < K; ++k)
                    state_.beta(c * K + k, rec.time - 1) = U(row, k) * svd.singularValues()[k];
                ++row;
            }
        };
        if (cfg_.common_flc)
            for (int c = 0; c < C; ++c) assign_rows(c);
        else
            assign_rows(group);

        // Smooth coefficient fits of the Euclidean-orthonormal loadings.
        Eigen::MatrixXd& d = state_.flc.d[static_cast<std::size_t>(group)];
        for (int k = 0; k < K; ++k)
            d.col(k) = phi_llt.solve(phi_grid.transpose() * V.col(k));
        for (int k = 0; k < K; ++k) {
            const double ss = d.col(k).tail(p - 2).squaredNorm();
            state_.flc.lambda[static_cast<std::size_t>(group)][k] =
                std::clamp((p - 2) / std::max(ss, 1e-300), 1e-8, 1e16);
        }
    };

    if (cfg_.common_flc) {
        Eigen::Index total_rows = 0;
        for (int c = 0; c < C; ++c) total_rows += comp.per_outcome[static_cast<std::size_t>(c)].rows();
        Eigen::MatrixXd stacked(total_rows, grid_n);
        Eigen::Index at = 0;
        for (int c = 0; c < C; ++c) {
            stacked.middleRows(at, comp.per_outcome[static_cast<std::size_t>(c)].rows()) =
                comp.per_outcome[static_cast<std::size_t>(c)];
            at += comp.per_outcome[static_cast<std::size_t>(c)].rows();
        }
        svd_block(stacked, 0);
    } else {
        for (int c = 0; c < C; ++c) svd_block(comp.per_outcome[static_cast<std::size_t>(c)], c);
    }

    // Observation variances by conditional MLE.
    refresh_loading_values();
    state_.sigma2_obs = Eigen::VectorXd::Constant(C, 1.0);
    const Eigen::VectorXd ssr = residual_sumsq();
    for (int c = 0; c < C; ++c)
        state_.sigma2_obs[c] =
            std::max(ssr[c] / static_cast<double>(cache_->observation_count(c)), 1e-10);

    // Constrained, normalized posterior-mean refinement of the coefficients.
    for (int g = 0; g < G; ++g) {
        for (int k = 0; k < K; ++k) {
            FlcOptions opts{cfg_.priors.flc_diffuse_var, cfg_.priors.sd_upper, 10};
            const GaussianFactor fac = build_flc_conditional(k, g, state_.flc, state_.beta,
                                                             *cache_, state_.sigma2_obs, opts);
            normalize_flc(k, g, state_.flc, state_.beta, *cache_, solve_constrained(fac));
        }
    }
    refresh_loading_values();

    // Evolution-level parameters: slopes and AR coefficients at zero, hidden
    // states engaged, volatilities at the conditional MLE level.
    state_.gamma = Eigen::MatrixXd::Zero(K, C);
    state_.psi = Eigen::MatrixXd::Zero(K, C);
    state_.states = Eigen::MatrixXi::Ones(C * K, T);
    const double q_mean = cfg_.priors.hmm_a / (cfg_.priors.hmm_a + cfg_.priors.hmm_b);
    state_.q01 = Eigen::MatrixXd::Constant(K, C, q_mean);
    state_.q10 = Eigen::MatrixXd::Constant(K, C, q_mean);
    state_.sigma2_innov = Eigen::MatrixXd::Zero(K, C);
    for (int k = 0; k < K; ++k)
        for (int c = 0; c < C; ++c) {
            const double var =
                std::max(state_.beta.row(c * K + k).squaredNorm() / T, 1e-8);
            state_.sigma2_innov(k, c) = var;
        }
    state_.sv_xi0 = state_.sigma2_innov.array().log().matrix();
    state_.sv_xi1 = Eigen::MatrixXd::Constant(K, C, 0.5);
    state_.sv_sigma2h = Eigen::MatrixXd::Constant(K, C, 0.1);
    state_.h = Eigen::MatrixXd::Zero(C * K, T);
    for (int c = 0; c < C; ++c)
        for (int k = 0; k < K; ++k)
            state_.h.row(c * K + k).setConstant(state_.sv_xi0(k, c));

    if (cfg_.model == ModelKind::RandomWalk) {
        state_.walk_cov.assign(static_cast<std::size_t>(K),
                               Eigen::MatrixXd::Identity(C, C));
        const int bins = cfg_.walk.bins;
        const int trials = cfg_.walk.units * cfg_.walk.trials;
        for (int k = 0; k < K; ++k) {
            Eigen::MatrixXd outer = Eigen::MatrixXd::Zero(C, C);
            long n = 0;
            for (int tr = 0; tr < trials; ++tr)
                for (int b = 1; b < bins; ++b) {
                    const int t = tr * bins + b;
                    Eigen::VectorXd w(C);
                    for (int c = 0; c < C; ++c)
                        w[c] = state_.beta(c * K + k, t) - state_.beta(c * K + k, t - 1);
                    outer.noalias() += w * w.transpose();
                    ++n;
                }
            if (n > 0)
                state_.walk_cov[static_cast<std::size_t>(k)] =
                    outer / static_cast<double>(n) + 1e-8 * Eigen::MatrixXd::Identity(C, C);
        }
    }

    state_.iteration = 0;
    mean_beta_ = Eigen::MatrixXd::Zero(C * K, T);
    mean_d_.assign(static_cast<std::size_t>(G), Eigen::MatrixXd::Zero(p, K));
    mean_sigma2_ = Eigen::VectorXd::Zero(C);
    retained_ = 0;
}

Eigen::VectorXd Fitter::residual_sumsq() const {
    const int C = data_.num_outcomes();
    const int K = cfg_.K;
    Eigen::VectorXd ssr = Eigen::VectorXd::Zero(C);
    for (int c = 0; c < C; ++c) {
        const int g = state_.flc.group_of(c);
        const auto& recs = cache_->records(c);
        const auto& raw = data_.outcomes[static_cast<std::size_t>(c)];
        for (std::size_t r = 0; r < recs.size(); ++r) {
            const Eigen::MatrixXd& fv = fvals_[static_cast<std::size_t>(g)]
                                              [static_cast<std::size_t>(recs[r].set)];
            const Eigen::VectorXd mu =
                fv * state_.beta.block(c * K, recs[r].time - 1, K, 1);
            ssr[c] += (raw[r].y - mu).squaredNorm();
        }
    }
    return ssr;
}

void Fitter::run_factor_block(int iter) {
    const int K = cfg_.K, C = data_.num_outcomes(), T = cache_->num_times();
    const int n = C * K;

    auto fill_obs = [&](StateSpaceSpec& spec, int spec_t, int global_t) {
        const auto& recs_t = records_by_time_[static_cast<std::size_t>(global_t)];
        Eigen::Index rows = 0;
        for (const auto& [c, r] : recs_t)
            rows += data_.outcomes[static_cast<std::size_t>(c)][static_cast<std::size_t>(r)]
                        .tau.size();
        Eigen::MatrixXd F = Eigen::MatrixXd::Zero(rows, n);
        Eigen::VectorXd y(rows);
        Eigen::VectorXd var(rows);
        Eigen::Index at = 0;
        for (const auto& [c, r] : recs_t) {
            const auto& rec = cache_->records(c)[static_cast<std::size_t>(r)];
            const auto& raw = data_.outcomes[static_cast<std::size_t>(c)][static_cast<std::size_t>(r)];
            const Eigen::MatrixXd& fv =
                fvals_[static_cast<std::size_t>(state_.flc.group_of(c))]
                      [static_cast<std::size_t>(rec.set)];
            F.block(at, c * K, fv.rows(), K) = fv;
            y.segment(at, fv.rows()) = raw.y;
            var.segment(at, fv.rows()).setConstant(state_.sigma2_obs[c]);
            at += fv.rows();
        }
        spec.F[static_cast<std::size_t>(spec_t)] = std::move(F);
        spec.y[static_cast<std::size_t>(spec_t)] = std::move(y);
        spec.obs_var[static_cast<std::size_t>(spec_t)] = std::move(var);
    };

    if (cfg_.model == ModelKind::RandomWalk) {
        const int bins = cfg_.walk.bins;
        const int trials = cfg_.walk.units * cfg_.walk.trials;
        Eigen::MatrixXd W_walk;
        assemble_random_walk(state_.walk_cov, K, C, W_walk);
        const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);

        parallel_for(trials, cfg_.threads, [&](int tr) {
            RngStream rng(derive_seed(cfg_.seed, {kBlockFactors, static_cast<std::uint64_t>(iter),
                                                  static_cast<std::uint64_t>(tr)}));
            StateSpaceSpec spec;
            spec.m0 = Eigen::VectorXd::Zero(n);
            spec.P0 = Eigen::MatrixXd::Identity(n, n);
            spec.G.assign(static_cast<std::size_t>(bins), eye);
            spec.W.assign(static_cast<std::size_t>(bins), W_walk);
            // The first bin of a trial is a fresh diffuse start.
            spec.G[0] = Eigen::MatrixXd::Zero(n, n);
            spec.W[0] = cfg_.priors.state_prior_var * eye;
            spec.F.resize(static_cast<std::size_t>(bins));
            spec.y.resize(static_cast<std::size_t>(bins));
            spec.obs_var.resize(static_cast<std::size_t>(bins));
            for (int b = 0; b < bins; ++b) fill_obs(spec, b, tr * bins + b);
            const FfbsResult draw = ffbs(spec, rng);
            state_.beta.middleCols(tr * bins, bins) = draw.states;
        });
        return;
    }

    // Common trend (plain or hidden Markov): one chain over the full span.
    RngStream rng(derive_seed(cfg_.seed, {kBlockFactors, static_cast<std::uint64_t>(iter)}));
    CommonTrendParams params{state_.gamma, state_.psi, cfg_.linked()};
    StateSpaceSpec spec;
    spec.m0 = Eigen::VectorXd::Zero(n);
    spec.P0 = cfg_.priors.state_prior_var * Eigen::MatrixXd::Identity(n, n);
    spec.G.resize(static_cast<std::size_t>(T));
    spec.W.resize(static_cast<std::size_t>(T));
    spec.F.resize(static_cast<std::size_t>(T));
    spec.y.resize(static_cast<std::size_t>(T));
    spec.obs_var.resize(static_cast<std::size_t>(T));
    Eigen::MatrixXd sig2(cfg_.K, C);
    Eigen::MatrixXi s_t(cfg_.K, C), s_prev(cfg_.K, C);
    for (int t = 0; t < T; ++t) {
        for (int k = 0; k < cfg_.K; ++k)
            for (int c = 0; c < C; ++c) {
                sig2(k, c) = innovation_variance(k, c, t);
                s_t(k, c) = state_.states(c * cfg_.K + k, t);
                s_prev(k, c) = state_.states(c * cfg_.K + k, std::max(t - 1, 0));
            }
        assemble_common_trend(params, sig2, s_t, s_prev, spec.G[static_cast<std::size_t>(t)],
                              spec.W[static_cast<std::size_t>(t)]);
        fill_obs(spec, t, t);
    }
    state_.beta = ffbs(spec, rng).states;
}

void Fitter::run_evolution_block(int iter) {
    if (cfg_.model == ModelKind::RandomWalk) return;  // evolution is fixed at G = I
    const int K = cfg_.K, C = data_.num_outcomes(), T = cache_->num_times();

    for (int k = 0; k < K; ++k) {
        for (int c = 0; c < C; ++c) {
            RngStream rng(derive_seed(cfg_.seed, {kBlockTrend, static_cast<std::uint64_t>(iter),
                                                  static_cast<std::uint64_t>(k),
                                                  static_cast<std::uint64_t>(c)}));
            const int row = c * K + k;
            Eigen::VectorXd sig2_path(T);
            for (int t = 0; t < T; ++t) sig2_path[t] = innovation_variance(k, c, t);

            const bool lnk = c > 0 && k < cfg_.linked();
            const Eigen::VectorXd beta_c = state_.beta.row(row).transpose();
            const Eigen::VectorXd beta_ref = state_.beta.row(k).transpose();
            Eigen::VectorXi s_path = state_.states.row(row).transpose();

            if (lnk) {
                state_.gamma(k, c) = sample_slope(beta_c, beta_ref, s_path, state_.psi(k, c),
                                                  sig2_path, cfg_.priors.slope_var, rng);
                if (cfg_.model == ModelKind::CommonTrendHmm) {
                    s_path = sample_hmm_path(beta_c, beta_ref, state_.gamma(k, c),
                                             state_.psi(k, c), sig2_path, state_.q01(k, c),
                                             state_.q10(k, c), rng);
                    state_.states.row(row) = s_path.transpose();
                    const auto [q01, q10] = sample_transition_probs(
                        s_path, cfg_.priors.hmm_a, cfg_.priors.hmm_b, cfg_.priors.hmm_a,
                        cfg_.priors.hmm_b, rng);
                    state_.q01(k, c) = q01;
                    state_.q10(k, c) = q10;
                }
            }

            Eigen::VectorXd omega = beta_c;
            if (lnk)
                for (int t = 0; t < T; ++t)
                    omega[t] -= static_cast<double>(s_path[t]) * state_.gamma(k, c) * beta_ref[t];
            state_.psi(k, c) = sample_ar1(omega, sig2_path, cfg_.priors.ar_var, rng);
        }
    }
}

void Fitter::run_variance_block(int iter) {
    const int K = cfg_.K, C = data_.num_outcomes(), T = cache_->num_times();

    // Observation variances.
    const Eigen::VectorXd ssr = residual_sumsq();
    for (int c = 0; c < C; ++c) {
        RngStream rng(derive_seed(cfg_.seed, {kBlockObsVar, static_cast<std::uint64_t>(iter),
                                              static_cast<std::uint64_t>(c)}));
        state_.sigma2_obs[c] =
            sample_variance(static_cast<double>(cache_->observation_count(c)), ssr[c], rng,
                            cfg_.priors.var_prior_shape, cfg_.priors.var_prior_rate);
    }
    const double dev_sigma_term = [&] {
        double d = 0.0;
        for (int c = 0; c < C; ++c) {
            const double n = static_cast<double>(cache_->observation_count(c));
            d += n * (kLog2Pi + std::log(state_.sigma2_obs[c])) + ssr[c] / state_.sigma2_obs[c];
        }
        return d;
    }();
    last_deviance_ = dev_sigma_term;

    if (cfg_.model == ModelKind::RandomWalk) {
        const int bins = cfg_.walk.bins;
        const int trials = cfg_.walk.units * cfg_.walk.trials;
        const double rho = cfg_.priors.wishart_rho > 0.0 ? cfg_.priors.wishart_rho
                                                         : static_cast<double>(C);
        for (int k = 0; k < K; ++k) {
            RngStream rng(derive_seed(cfg_.seed, {kBlockVol, static_cast<std::uint64_t>(iter),
                                                  static_cast<std::uint64_t>(k)}));
            Eigen::MatrixXd outer = Eigen::MatrixXd::Zero(C, C);
            long n = 0;
            for (int tr = 0; tr < trials; ++tr)
                for (int b = 1; b < bins; ++b) {
                    const int t = tr * bins + b;
                    Eigen::VectorXd w(C);
                    for (int c = 0; c < C; ++c)
                        w[c] = state_.beta(c * K + k, t) - state_.beta(c * K + k, t - 1);
                    outer.noalias() += w * w.transpose();
                    ++n;
                }
            state_.walk_cov[static_cast<std::size_t>(k)] =
                sample_walk_covariance(outer, n, rho, rng);
        }
        return;
    }

    // Innovation volatility, one series per (k, c).
    std::mutex counter_mutex;
    parallel_for(K * C, cfg_.threads, [&](int idx) {
        const int k = idx % K;
        const int c = idx / K;
        RngStream rng(derive_seed(cfg_.seed, {kBlockVol, static_cast<std::uint64_t>(iter),
                                              static_cast<std::uint64_t>(k),
                                              static_cast<std::uint64_t>(c)}));
        const int row = c * K + k;
        const double psi = state_.psi(k, c);
        const double g = (c > 0 && k < cfg_.linked()) ? state_.gamma(k, c) : 0.0;

        Eigen::VectorXd omega(T);
        for (int t = 0; t < T; ++t)
            omega[t] = state_.beta(row, t) -
                       (c > 0 ? static_cast<double>(state_.states(row, t)) * g * state_.beta(k, t)
                              : 0.0);
        Eigen::VectorXd innov(T);
        innov[0] = omega[0] * std::sqrt(1.0 - psi * psi);
        for (int t = 1; t < T; ++t) innov[t] = omega[t] - psi * omega[t - 1];

        if (cfg_.sv_on(k)) {
            SvState sv{state_.h.row(row).transpose(), state_.sv_xi0(k, c), state_.sv_xi1(k, c),
                       state_.sv_sigma2h(k, c)};
            SvCounters counters;
            sample_sv_path(innov, sv, cfg_.priors.sv, rng, &counters);
            state_.h.row(row) = sv.h.transpose();
            state_.sv_xi0(k, c) = sv.xi0;
            state_.sv_xi1(k, c) = sv.xi1;
            state_.sv_sigma2h(k, c) = sv.sigma2_h;
            std::lock_guard<std::mutex> lock(counter_mutex);
            sv_counters_.clamped_innovations += counters.clamped_innovations;
            sv_counters_.mh_accepts += counters.mh_accepts;
            sv_counters_.mh_steps += counters.mh_steps;
        } else {
            state_.sigma2_innov(k, c) =
                sample_variance(static_cast<double>(T), innov.squaredNorm(), rng,
                                cfg_.priors.var_prior_shape, cfg_.priors.var_prior_rate);
        }
    });
}

void Fitter::reorder_by_lambda() {
    const int K = cfg_.K, C = data_.num_outcomes();
    for (int g = 0; g < state_.flc.num_groups(); ++g) {
        Eigen::VectorXd& lam = state_.flc.lambda[static_cast<std::size_t>(g)];
        std::vector<int> perm(static_cast<std::size_t>(K));
        for (int k = 0; k < K; ++k) perm[static_cast<std::size_t>(k)] = k;
        std::stable_sort(perm.begin(), perm.end(),
                         [&](int a, int b) { return lam[a] > lam[b]; });
        bool identity = true;
        for (int k = 0; k < K; ++k) identity = identity && perm[static_cast<std::size_t>(k)] == k;
        if (identity) continue;

        auto permute_cols = [&](Eigen::MatrixXd& mat) {
            Eigen::MatrixXd tmp = mat;
            for (int k = 0; k < K; ++k) mat.col(k) = tmp.col(perm[static_cast<std::size_t>(k)]);
        };
        auto permute_vec = [&](Eigen::VectorXd& v) {
            Eigen::VectorXd tmp = v;
            for (int k = 0; k < K; ++k) v[k] = tmp[perm[static_cast<std::size_t>(k)]];
        };
        permute_cols(state_.flc.d[static_cast<std::size_t>(g)]);
        permute_vec(lam);

        // All per-k rows of the outcomes in this group move together.
        for (int c = 0; c < C; ++c) {
            if (state_.flc.group_of(c) != g) continue;
            auto permute_rows = [&](auto& mat) {
                auto tmp = mat.middleRows(c * K, K).eval();
                for (int k = 0; k < K; ++k)
                    mat.row(c * K + k) = tmp.row(perm[static_cast<std::size_t>(k)]);
            };
            permute_rows(state_.beta);
            permute_rows(state_.states);
            permute_rows(state_.h);
            auto permute_kc = [&](Eigen::MatrixXd& mat) {
                Eigen::VectorXd tmp = mat.col(c);
                for (int k = 0; k < K; ++k) mat(k, c) = tmp[perm[static_cast<std::size_t>(k)]];
            };
            permute_kc(state_.gamma);
            permute_kc(state_.psi);
            permute_kc(state_.q01);
            permute_kc(state_.q10);
            permute_kc(state_.sv_xi0);
            permute_kc(state_.sv_xi1);
            permute_kc(state_.sv_sigma2h);
            permute_kc(state_.sigma2_innov);
        }
        if (!state_.walk_cov.empty()) {
            auto tmp = state_.walk_cov;
            for (int k = 0; k < K; ++k)
                state_.walk_cov[static_cast<std::size_t>(k)] =
                    tmp[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])];
        }
    }
}

void Fitter::iterate() {
    using clock = std::chrono::steady_clock;
    const int iter = state_.iteration + 1;
    const char* block = "curves";
    auto timed = [&](int slot, auto&& fn) {
        const auto t0 = clock::now();
        fn();
        block_seconds_[slot] += std::chrono::duration<double>(clock::now() - t0).count();
    };
    try {
        // Block 1: smoothing parameters and loading curves.
        timed(0, [&] {
            RngStream rng(derive_seed(cfg_.seed, {kBlockFlc, static_cast<std::uint64_t>(iter)}));
            FlcOptions opts{cfg_.priors.flc_diffuse_var, cfg_.priors.sd_upper, 10};
            const FlcSweepLog log =
                flc_sweep(state_.flc, state_.beta, *cache_, state_.sigma2_obs, iter, opts, rng);
            degenerate_lambda_ += log.degenerate_lambda_windows;
            refresh_loading_values();
        });
        // Block 2: factors.
        block = "factors";
        timed(1, [&] { run_factor_block(iter); });
        // Block 3: state evolution parameters.
        block = "evolution";
        timed(2, [&] { run_evolution_block(iter); });
        // Block 4: variances.
        block = "variances";
        timed(3, [&] { run_variance_block(iter); });

        block = "reorder";
        if (iter == 10) reorder_by_lambda();
    } catch (const std::exception& e) {
        std::string lam;
        for (const auto& l : state_.flc.lambda)
            for (Eigen::Index k = 0; k < l.size(); ++k) lam += " " + format_double(l[k]);
        std::string sig;
        for (Eigen::Index c = 0; c < state_.sigma2_obs.size(); ++c)
            sig += " " + format_double(state_.sigma2_obs[c]);
        throw numeric_error("iteration " + std::to_string(iter) + ", block '" + block +
                            "': " + e.what() + " | lambda:" + lam + " | sigma2:" + sig);
    }
    state_.iteration = iter;
}

void Fitter::record_draw() {
    const int K = cfg_.K, C = data_.num_outcomes(), T = cache_->num_times();
    const int G = state_.flc.num_groups();

    mean_beta_ += state_.beta;
    for (int g = 0; g < G; ++g) mean_d_[static_cast<std::size_t>(g)] += state_.flc.d[static_cast<std::size_t>(g)];
    mean_sigma2_ += state_.sigma2_obs;
    ++retained_;

    for (auto& [name, mon] : monitors_) {
        std::vector<double> row;
        row.reserve(mon.skeleton.indices.size());
        if (name == "lambda") {
            for (int g = 0; g < G; ++g)
                for (int k = 0; k < K; ++k) row.push_back(state_.flc.lambda[static_cast<std::size_t>(g)][k]);
        } else if (name == "d") {
            for (int g = 0; g < G; ++g)
                for (int k = 0; k < K; ++k)
                    for (int j = 0; j < basis_->dim(); ++j)
                        row.push_back(state_.flc.d[static_cast<std::size_t>(g)](j, k));
        } else if (name == "gamma") {
            for (int k = 0; k < cfg_.linked(); ++k)
                for (int c = 1; c < C; ++c) row.push_back(state_.gamma(k, c));
        } else if (name == "psi") {
            for (int k = 0; k < K; ++k)
                for (int c = 0; c < C; ++c) row.push_back(state_.psi(k, c));
        } else if (name == "sigma2") {
            for (int c = 0; c < C; ++c) row.push_back(state_.sigma2_obs[c]);
        } else if (name == "sigma2_innov") {
            for (int k = 0; k < K; ++k)
                for (int c = 0; c < C; ++c) row.push_back(state_.sigma2_innov(k, c));
        } else if (name == "sv_xi0") {
            for (int k = 0; k < K; ++k)
                for (int c = 0; c < C; ++c) row.push_back(state_.sv_xi0(k, c));
        } else if (name == "sv_xi1") {
            for (int k = 0; k < K; ++k)
                for (int c = 0; c < C; ++c) row.push_back(state_.sv_xi1(k, c));
        } else if (name == "sv_sigma2h") {
            for (int k = 0; k < K; ++k)
                for (int c = 0; c < C; ++c) row.push_back(state_.sv_sigma2h(k, c));
        } else if (name == "q01") {
            for (int k = 0; k < cfg_.linked(); ++k)
                for (int c = 1; c < C; ++c) row.push_back(state_.q01(k, c));
        } else if (name == "q10") {
            for (int k = 0; k < cfg_.linked(); ++k)
                for (int c = 1; c < C; ++c) row.push_back(state_.q10(k, c));
        } else if (name == "W") {
            for (int k = 0; k < K; ++k)
                for (int i = 0; i < C; ++i)
                    for (int j = 0; j < C; ++j)
                        row.push_back(state_.walk_cov[static_cast<std::size_t>(k)](i, j));
        } else if (name == "beta") {
            for (int c = 0; c < C; ++c)
                for (int k = 0; k < K; ++k)
                    for (int t = 0; t < T; ++t) row.push_back(state_.beta(c * K + k, t));
        } else if (name == "h") {
            for (int c = 0; c < C; ++c)
                for (int k = 0; k < K; ++k)
                    for (int t = 0; t < T; ++t) row.push_back(state_.h(c * K + k, t));
        } else if (name == "deviance") {
            row.push_back(last_deviance_);
        } else if (name == "resid2") {
            for (int c = 0; c < C; ++c)
                for (int k = 0; k < K; ++k) {
                    const int r = c * K + k;
                    const double psi = state_.psi(k, c);
                    const double g = (c > 0 && k < cfg_.linked()) ? state_.gamma(k, c) : 0.0;
                    double omega_prev = 0.0;
                    for (int t = 0; t < T; ++t) {
                        const double omega =
                            state_.beta(r, t) -
                            (c > 0 ? static_cast<double>(state_.states(r, t)) * g *
                                         state_.beta(k, t)
                                   : 0.0);
                        const double innov = (t == 0) ? omega * std::sqrt(1.0 - psi * psi)
                                                      : omega - psi * omega_prev;
                        const double rstd = innov / std::sqrt(innovation_variance(k, c, t));
                        row.push_back(rstd * rstd);
                        omega_prev = omega;
                    }
                }
        }
        mon.rows.push_back(std::move(row));
    }
}

Chain Fitter::run() {
    using clock = std::chrono::steady_clock;
    if (state_.iteration == 0) init();

    double block_seconds = 0.0;
    const auto t_start = clock::now();
    for (int iter = state_.iteration; iter < cfg_.iterations;) {
        const auto t0 = clock::now();
        iterate();
        iter = state_.iteration;
        if (iter > cfg_.burnin) record_draw();
        block_seconds += std::chrono::duration<double>(clock::now() - t0).count();
        if (log_ && cfg_.progress_every > 0 && iter % cfg_.progress_every == 0) {
            (*log_) << "[mfdlm] iteration " << iter << "/" << cfg_.iterations << ", "
                    << block_seconds / cfg_.progress_every * 1000.0 << " ms/iter"
                    << " (curves " << block_seconds_[0] << " s, factors " << block_seconds_[1]
                    << " s, evolution " << block_seconds_[2] << " s, variances "
                    << block_seconds_[3] << " s)";
            if (cfg_.sv && sv_counters_.mh_steps > 0)
                (*log_) << ", sv accept "
                        << static_cast<double>(sv_counters_.mh_accepts) /
                               static_cast<double>(sv_counters_.mh_steps);
            if (degenerate_lambda_ > 0)
                (*log_) << ", degenerate lambda windows " << degenerate_lambda_;
            (*log_) << '\n';
            block_seconds = 0.0;
        }
        if (cfg_.checkpoint_every > 0 && iter % cfg_.checkpoint_every == 0 &&
            iter < cfg_.iterations && on_checkpoint) {
            if (log_) (*log_) << "[mfdlm] checkpoint at iteration " << iter << '\n';
            on_checkpoint(*this);
        }
    }
    if (log_)
        (*log_) << "[mfdlm] finished " << cfg_.iterations << " iterations in "
                << std::chrono::duration<double>(clock::now() - t_start).count() << " s\n";

    Chain chain;
    chain.iterations = cfg_.iterations;
    chain.burnin = cfg_.burnin;
    chain.seed = cfg_.seed;
    for (auto& [name, mon] : monitors_) {
        ChainSeries s = mon.skeleton;
        s.draws.resize(static_cast<Eigen::Index>(mon.rows.size()),
                       static_cast<Eigen::Index>(s.indices.size()));
        for (std::size_t r = 0; r < mon.rows.size(); ++r)
            for (std::size_t e = 0; e < mon.rows[r].size(); ++e)
                s.draws(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(e)) =
                    mon.rows[r][e];
        chain.series[name] = std::move(s);
    }
    const double denom = retained_ > 0 ? static_cast<double>(retained_) : 1.0;
    chain.mean_beta = mean_beta_ / denom;
    chain.mean_sigma2 = mean_sigma2_ / denom;
    for (const auto& d : mean_d_) chain.mean_d.push_back(d / denom);

    nlohmann::json manifest;
    manifest["version"] = kVersion;
    manifest["seed"] = cfg_.seed;
    manifest["iterations"] = cfg_.iterations;
    manifest["burnin"] = cfg_.burnin;
    manifest["config"] = cfg_.to_json();
    manifest["data"] = {{"outcomes", data_.num_outcomes()},
                        {"max_time", data_.max_time()},
                        {"observations", data_.total_observations()},
                        {"domain", {data_.domain_lo, data_.domain_hi}}};
    nlohmann::json knots = nlohmann::json::array();
    for (double v : basis_->knots().interior) knots.push_back(v);
    manifest["basis"] = {{"M", cfg_.M},
                         {"interior_knots", knots},
                         {"domain", {basis_->domain_lo(), basis_->domain_hi()}}};
    chain.manifest = std::move(manifest);
    return chain;
}

nlohmann::json Fitter::checkpoint_json() const {
    nlohmann::json j;
    j["format_version"] = 1;
    j["version"] = kVersion;
    j["iteration"] = state_.iteration;
    j["config"] = cfg_.to_json();
    nlohmann::json st;
    st["beta"] = matrix_to_json(state_.beta);
    st["gamma"] = matrix_to_json(state_.gamma);
    st["psi"] = matrix_to_json(state_.psi);
    st["states"] = matrix_to_json(state_.states.cast<double>());
    st["q01"] = matrix_to_json(state_.q01);
    st["q10"] = matrix_to_json(state_.q10);
    st["h"] = matrix_to_json(state_.h);
    st["sv_xi0"] = matrix_to_json(state_.sv_xi0);
    st["sv_xi1"] = matrix_to_json(state_.sv_xi1);
    st["sv_sigma2h"] = matrix_to_json(state_.sv_sigma2h);
    st["sigma2_innov"] = matrix_to_json(state_.sigma2_innov);
    st["sigma2_obs"] = matrix_to_json(state_.sigma2_obs);
    nlohmann::json dlist = nlohmann::json::array();
    nlohmann::json llist = nlohmann::json::array();
    for (std::size_t g = 0; g < state_.flc.d.size(); ++g) {
        dlist.push_back(matrix_to_json(state_.flc.d[g]));
        llist.push_back(matrix_to_json(state_.flc.lambda[g]));
    }
    st["d"] = std::move(dlist);
    st["lambda"] = std::move(llist);
    nlohmann::json wlist = nlohmann::json::array();
    for (const auto& w : state_.walk_cov) wlist.push_back(matrix_to_json(w));
    st["walk_cov"] = std::move(wlist);
    j["state"] = std::move(st);

    nlohmann::json acc;
    acc["retained"] = retained_;
    acc["mean_beta"] = matrix_to_json(mean_beta_);
    acc["mean_sigma2"] = matrix_to_json(mean_sigma2_);
    nlohmann::json mdlist = nlohmann::json::array();
    for (const auto& d : mean_d_) mdlist.push_back(matrix_to_json(d));
    acc["mean_d"] = std::move(mdlist);
    nlohmann::json draws;
    for (const auto& [name, mon] : monitors_) {
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& r : mon.rows) rows.push_back(r);
        draws[name] = std::move(rows);
    }
    acc["draws"] = std::move(draws);
    j["accumulators"] = std::move(acc);
    return j;
}

void Fitter::restore(const nlohmann::json& j) {
    try {
        if (j.value("format_version", 0) != 1)
            throw data_error("checkpoint: unsupported format version");
        const FitConfig saved = FitConfig::from_json(j.at("config"));
        if (saved.to_json() != cfg_.to_json())
            throw data_error("checkpoint: configuration differs from the current fit");
        init();  // sizes every buffer, then overwrite
        const auto& st = j.at("state");
        state_.beta = matrix_from_json(st.at("beta"));
        state_.gamma = matrix_from_json(st.at("gamma"));
        state_.psi = matrix_from_json(st.at("psi"));
        state_.states = int_matrix_from_json(st.at("states"));
        state_.q01 = matrix_from_json(st.at("q01"));
        state_.q10 = matrix_from_json(st.at("q10"));
        state_.h = matrix_from_json(st.at("h"));
        state_.sv_xi0 = matrix_from_json(st.at("sv_xi0"));
        state_.sv_xi1 = matrix_from_json(st.at("sv_xi1"));
        state_.sv_sigma2h = matrix_from_json(st.at("sv_sigma2h"));
        state_.sigma2_innov = matrix_from_json(st.at("sigma2_innov"));
        state_.sigma2_obs = matrix_from_json(st.at("sigma2_obs")).col(0);
        state_.flc.d.clear();
        state_.flc.lambda.clear();
        for (const auto& d : st.at("d")) state_.flc.d.push_back(matrix_from_json(d));
        for (const auto& l : st.at("lambda")) state_.flc.lambda.push_back(matrix_from_json(l).col(0));
        state_.walk_cov.clear();
        for (const auto& w : st.at("walk_cov")) state_.walk_cov.push_back(matrix_from_json(w));
        state_.iteration = j.at("iteration").get<int>();

        const auto& acc = j.at("accumulators");
        retained_ = acc.at("retained").get<long>();
        mean_beta_ = matrix_from_json(acc.at("mean_beta"));
        mean_sigma2_ = matrix_from_json(acc.at("mean_sigma2")).col(0);
        mean_d_.clear();
        for (const auto& d : acc.at("mean_d")) mean_d_.push_back(matrix_from_json(d));
        for (auto& [name, mon] : monitors_) {
            mon.rows.clear();
            if (acc.at("draws").contains(name))
                for (const auto& r : acc.at("draws").at(name))
                    mon.rows.push_back(r.get<std::vector<double>>());
        }
        refresh_loading_values();
    } catch (const nlohmann::json::exception& e) {
        throw data_error(std::string("checkpoint: ") + e.what());
    }
}

KRange suggest_k_range(const FunctionalDataset& data, double lower_frac, double upper_frac,
                       int max_grid_size) {
    if (!(lower_frac > 0.0 && lower_frac <= upper_frac && upper_frac <= 1.0))
        throw data_error("suggest_k_range: requires 0 < lower <= upper <= 1");
    const Completed comp = complete_to_grid(data, max_grid_size);
    Eigen::Index rows = 0;
    for (const auto& m : comp.per_outcome) rows += m.rows();
    Eigen::MatrixXd stacked(rows, comp.grid.size());
    Eigen::Index at = 0;
    for (const auto& m : comp.per_outcome) {
        stacked.middleRows(at, m.rows()) = m;
        at += m.rows();
    }
    stacked.rowwise() -= stacked.colwise().mean();  // center the columns first

    Eigen::BDCSVD<Eigen::MatrixXd> svd(stacked);
    const Eigen::VectorXd sv = svd.singularValues();
    const Eigen::VectorXd frac = sv.array().square() / sv.array().square().sum();

    KRange out;
    double cum = 0.0;
    for (Eigen::Index k = 0; k < frac.size(); ++k) {
        cum += frac[k];
        if (out.k_min == 0 && cum >= lower_frac - 1e-12) out.k_min = static_cast<int>(k) + 1;
        if (out.k_max == 0 && cum >= upper_frac - 1e-12) {
            out.k_max = static_cast<int>(k) + 1;
            break;
        }
    }
    if (out.k_min == 0) out.k_min = static_cast<int>(frac.size());
    if (out.k_max == 0) out.k_max = static_cast<int>(frac.size());
    out.note = "consider increasing the selected K by one to account for the initial centering";
    return out;
}

Chain fit(const FunctionalDataset& data, const FitConfig& config, std::ostream* log) {
    Fitter fitter(data, config, log);
    return fitter.run();
}

}  // namespace mfdlm
