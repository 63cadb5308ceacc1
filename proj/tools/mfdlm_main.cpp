#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include <CLI11.hpp>

#include "mfdlm/chain.hpp"
#include "mfdlm/common.hpp"
#include "mfdlm/dataset.hpp"
#include "mfdlm/diagnostics.hpp"
#include "mfdlm/gibbs.hpp"
#include "mfdlm/tfa.hpp"

namespace fs = std::filesystem;
using namespace mfdlm;

namespace {

std::optional<std::pair<double, double>> parse_domain(const std::string& s) {
    if (s.empty()) return std::nullopt;
    const auto comma = s.find(',');
    if (comma == std::string::npos)
        throw CLI::ValidationError("--domain", "expected the form a,b");
    try {
        return std::make_pair(std::stod(s.substr(0, comma)), std::stod(s.substr(comma + 1)));
    } catch (const std::exception&) {
        throw CLI::ValidationError("--domain", "expected numeric a,b");
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw data_error("cannot write " + path.string());
    out << text;
    if (!out) throw data_error("failed writing " + path.string());
}

int run_simulate(const std::string& spec_path, const std::string& out_path,
                 const std::string& truth_path, std::optional<std::uint64_t> seed) {
    SynthSpec spec = load_synth_spec(spec_path);
    if (seed) spec.seed = *seed;
    auto [data, truth] = generate_synthetic(spec);
    write_long_csv(data, out_path);
    if (!truth_path.empty()) {
        nlohmann::json j;
        j["gamma"] = nlohmann::json::array();
        for (Eigen::Index k = 0; k < truth.gamma.rows(); ++k) {
            std::vector<double> row;
            for (Eigen::Index c = 0; c < truth.gamma.cols(); ++c) row.push_back(truth.gamma(k, c));
            j["gamma"].push_back(row);
        }
        j["psi"] = truth.psi(0, 0);
        j["sigma2"] = std::vector<double>(truth.sigma2.data(),
                                          truth.sigma2.data() + truth.sigma2.size());
        nlohmann::json d = nlohmann::json::array();
        for (Eigen::Index k = 0; k < truth.d.cols(); ++k) {
            std::vector<double> col(truth.d.col(k).data(), truth.d.col(k).data() + truth.d.rows());
            d.push_back(col);
        }
        j["curves"] = std::move(d);
        nlohmann::json knots = nlohmann::json::array();
        for (double v : truth.basis.knots().interior) knots.push_back(v);
        j["basis"] = {{"interior_knots", knots},
                      {"domain", {truth.basis.domain_lo(), truth.basis.domain_hi()}}};
        write_text(truth_path, j.dump(2) + "\n");
    }
    return 0;
}

int run_preprocess(const std::string& input, double rate, const std::string& outdir,
                   double band_lo, double band_hi) {
    const SignalSet signals = load_signal_csv(input, rate);
    TfaConfig cfg;
    cfg.band_lo = band_lo;
    cfg.band_hi = band_hi;
    TfaManifest manifest;
    const FunctionalDataset data = build_mfts(signals, cfg, &manifest);
    fs::create_directories(outdir);
    write_long_csv(data, (fs::path(outdir) / "mfts.csv").string());
    write_text(fs::path(outdir) / "tfa_manifest.json", manifest.to_json());
    std::cerr << "[mfdlm] wrote " << data.num_outcomes() << " outcomes x " << data.max_time()
              << " times, m = " << manifest.frequencies.size() << " frequencies\n";
    return 0;
}

int run_fit(const std::string& config_path, const std::string& data_path,
            const std::string& outdir, std::optional<std::uint64_t> seed, int threads,
            const std::string& domain, const std::string& resume, bool suggest_k,
            const std::string& knots) {
    FitConfig cfg = FitConfig::load(config_path);
    if (seed) cfg.seed = *seed;
    if (threads > 0) cfg.threads = threads;
    if (auto dom = parse_domain(domain)) cfg.domain = dom;
    if (!knots.empty()) {
        if (knots == "quantile") cfg.knot_style = KnotStyle::Quantile;
        else if (knots == "equal") cfg.knot_style = KnotStyle::Equal;
        else throw CLI::ValidationError("--knots", "expected 'quantile' or 'equal'");
    }
    cfg.validate();

    const FunctionalDataset data = load_long_csv(data_path, cfg.domain);

    if (suggest_k) {
        const KRange range = suggest_k_range(data, 0.80, 0.99, cfg.max_grid_size);
        std::cout << "K range for (80%, 99%) of total variance: [" << range.k_min << ", "
                  << range.k_max << "]\n"
                  << range.note << "\n";
        return 0;
    }

    fs::create_directories(outdir);
    Fitter fitter(data, cfg, &std::cerr);
    if (!resume.empty()) {
        std::ifstream in(resume);
        if (!in) throw data_error("cannot open checkpoint: " + resume);
        nlohmann::json snapshot;
        try {
            in >> snapshot;
        } catch (const nlohmann::json::exception& e) {
            throw data_error(resume + ": invalid JSON: " + std::string(e.what()));
        }
        fitter.restore(snapshot);
        std::cerr << "[mfdlm] resumed at iteration " << fitter.state().iteration << "\n";
    }
    if (cfg.checkpoint_every > 0) {
        const fs::path ckpt = fs::path(outdir) / "checkpoint.json";
        fitter.on_checkpoint = [ckpt](const Fitter& f) {
            const fs::path tmp = ckpt.string() + ".tmp";
            write_text(tmp, f.checkpoint_json().dump());
            fs::rename(tmp, ckpt);
        };
    }
    const Chain chain = fitter.run();
    write_chain(chain, outdir);
    std::cerr << "[mfdlm] chain written to " << outdir << "\n";
    return 0;
}

int run_diagnose(const std::string& chain_dir, const std::string& outdir,
                 const std::string& data_path, const std::string& grouping_path, int agg_df,
                 double mass) {
    const Chain chain = read_chain(chain_dir);
    fs::create_directories(outdir);

    // Efficiency factors and HPD intervals for every stored series.
    std::ofstream ess(fs::path(outdir) / "ess.csv");
    std::ofstream hpd(fs::path(outdir) / "hpd.csv");
    if (!ess || !hpd) throw data_error("cannot write diagnostics in " + outdir);
    ess << "param,index,efficiency_factor\n";
    hpd << "param,index,mean,hpd_lo,hpd_hi\n";
    std::ostringstream summary;
    summary << std::left << std::setw(28) << "parameter" << std::right << std::setw(12) << "mean"
            << std::setw(12) << "hpd_lo" << std::setw(12) << "hpd_hi" << "\n";
    const std::vector<std::string> summarized = {"gamma",  "psi",       "sigma2", "lambda",
                                                 "sv_xi1", "sv_sigma2h", "q01",    "q10"};
    for (const auto& [name, series] : chain.series) {
        if (name == "resid2") continue;
        if (series.draws.rows() == 0) continue;
        for (int e = 0; e < series.entries(); ++e) {
            std::string idx;
            for (std::size_t i = 0; i < series.indices[static_cast<std::size_t>(e)].size(); ++i)
                idx += (i ? ";" : "") +
                       std::to_string(series.indices[static_cast<std::size_t>(e)][i]);
            const Eigen::VectorXd col = series.draws.col(e);
            const auto ef = series.draws.rows() >= 100 ? efficiency_factor(col) : std::nullopt;
            ess << name << ',' << idx << ','
                << (ef ? format_double(*ef) : std::string("undefined")) << "\n";
            const auto [lo, hi] = hpd_interval(col, mass);
            hpd << name << ',' << idx << ',' << format_double(col.mean()) << ','
                << format_double(lo) << ',' << format_double(hi) << "\n";
            if (std::find(summarized.begin(), summarized.end(), name) != summarized.end()) {
                std::string label = name + "[" + idx + "]";
                summary << std::left << std::setw(28) << label << std::right << std::fixed
                        << std::setprecision(4) << std::setw(12) << col.mean() << std::setw(12)
                        << lo << std::setw(12) << hi << "\n";
                summary.unsetf(std::ios_base::floatfield);
            }
        }
    }

    if (chain.has("deviance") && !data_path.empty()) {
        // reload under the domain the fit used, which may have been overridden
        std::optional<std::pair<double, double>> dom;
        if (chain.manifest.contains("data") && chain.manifest["data"].contains("domain")) {
            const auto d = chain.manifest["data"]["domain"].get<std::vector<double>>();
            dom = std::make_pair(d.at(0), d.at(1));
        }
        const FunctionalDataset data = load_long_csv(data_path, dom);
        const double d = dic(chain, data);
        summary << "\nDIC: " << format_double(d) << "\n";
    }

    if (chain.has("resid2")) {
        const OutlierReport rep = outlier_probabilities(chain, agg_df);
        std::ofstream out(fs::path(outdir) / "outliers.csv");
        out << "kind,k,c,t,proportion\n";
        for (std::size_t i = 0; i < rep.indices.size(); ++i)
            out << "factor," << rep.indices[i][0] << ',' << rep.indices[i][1] << ','
                << rep.indices[i][2] << ',' << format_double(rep.proportion[static_cast<Eigen::Index>(i)])
                << "\n";
        for (std::size_t i = 0; i < rep.agg_indices.size(); ++i)
            out << "aggregate,," << rep.agg_indices[i][0] << ',' << rep.agg_indices[i][1] << ','
                << format_double(rep.agg_proportion[static_cast<Eigen::Index>(i)]) << "\n";
        if (!out) throw data_error("failed writing outliers.csv");
    }

    if (!grouping_path.empty()) {
        const ContrastGroups groups = ContrastGroups::load(grouping_path);
        const ContrastResult res = contrast_functionals(chain, groups);
        std::ofstream out(fs::path(outdir) / "contrasts.csv");
        out << "c,t,tau,mean,hpd_lo,hpd_hi\n";
        for (std::size_t e = 0; e < res.indices.size(); ++e) {
            for (Eigen::Index g = 0; g < res.tau.size(); ++g) {
                const Eigen::VectorXd col = res.draws[e].col(g);
                const auto [lo, hi] = hpd_interval(col, mass);
                out << res.indices[e][0] << ',' << res.indices[e][1] << ','
                    << format_double(res.tau[g]) << ',' << format_double(col.mean()) << ','
                    << format_double(lo) << ',' << format_double(hi) << "\n";
            }
        }
        if (!out) throw data_error("failed writing contrasts.csv");
    }

    write_text(fs::path(outdir) / "summary.txt", summary.str());
    std::cerr << "[mfdlm] diagnostics written to " << outdir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bayesian multivariate functional dynamic linear model"};
    app.set_version_flag("--version", std::string("mfdlm ") + kVersion);
    app.require_subcommand(1);

    // simulate
    auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset from a spec");
    std::string sim_spec, sim_out, sim_truth;
    std::optional<std::uint64_t> sim_seed;
    sim->add_option("--spec", sim_spec, "synthetic spec JSON")->required();
    sim->add_option("--out", sim_out, "output CSV path")->required();
    sim->add_option("--truth", sim_truth, "optional ground-truth JSON path");
    sim->add_option("--seed", sim_seed, "override the spec seed");

    // preprocess-tfa
    auto* pre = app.add_subcommand("preprocess-tfa", "multichannel signals -> functional series");
    std::string pre_in, pre_out;
    double pre_rate = 0.0, pre_lo = 0.1, pre_hi = 80.0;
    pre->add_option("--input", pre_in, "signal CSV (unit,trial,sample_index,ch1,...)")->required();
    pre->add_option("--rate", pre_rate, "sampling rate, Hz")->required();
    pre->add_option("--out", pre_out, "output directory")->required();
    pre->add_option("--band-lo", pre_lo, "lower frequency bound, Hz");
    pre->add_option("--band-hi", pre_hi, "upper frequency bound, Hz");

    // fit
    auto* fit_cmd = app.add_subcommand("fit", "run the Gibbs sampler");
    std::string fit_cfg, fit_data, fit_out, fit_domain, fit_resume;
    std::optional<std::uint64_t> fit_seed;
    int fit_threads = 0;
    bool fit_suggest = false;
    fit_cmd->add_option("--config", fit_cfg, "fit configuration JSON")->required();
    fit_cmd->add_option("--data", fit_data, "long-format data CSV")->required();
    fit_cmd->add_option("--out", fit_out, "output directory");
    fit_cmd->add_option("--seed", fit_seed, "override the config seed");
    fit_cmd->add_option("--threads", fit_threads, "intra-iteration parallelism bound");
    fit_cmd->add_option("--domain", fit_domain, "override the inferred tau domain (a,b)");
    fit_cmd->add_option("--resume", fit_resume, "resume from a checkpoint file");
    fit_cmd->add_flag("--suggest-k", fit_suggest, "print the variance-explained K range and exit");
    std::string fit_knots;
    fit_cmd->add_option("--knots", fit_knots, "knot placement: quantile (default) or equal");

    // diagnose
    auto* diag = app.add_subcommand("diagnose", "post-fit analysis of a stored chain");
    std::string diag_chain, diag_out, diag_data, diag_grouping;
    int diag_df = 4;
    double diag_mass = 0.95;
    diag->add_option("--chain", diag_chain, "chain directory from 'fit'")->required();
    diag->add_option("--out", diag_out, "output directory")->required();
    diag->add_option("--data", diag_data, "data CSV (enables DIC)");
    diag->add_option("--grouping", diag_grouping, "trial grouping JSON (enables contrasts)");
    diag->add_option("--agg-df", diag_df, "aggregate chi-squared degrees of freedom");
    diag->add_option("--mass", diag_mass, "HPD interval mass");

    try {
        app.parse(argc, argv);
        if (*sim) return run_simulate(sim_spec, sim_out, sim_truth, sim_seed);
        if (*pre) return run_preprocess(pre_in, pre_rate, pre_out, pre_lo, pre_hi);
        if (*fit_cmd) {
            if (!fit_suggest && fit_out.empty())
                throw CLI::RequiredError("--out (required unless --suggest-k)");
            return run_fit(fit_cfg, fit_data, fit_out, fit_seed, fit_threads, fit_domain,
                           fit_resume, fit_suggest, fit_knots);
        }
        if (*diag) return run_diagnose(diag_chain, diag_out, diag_data, diag_grouping, diag_df,
                                       diag_mass);
        return 1;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        app.exit(e);
        return 1;
    } catch (const data_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const numeric_error& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
