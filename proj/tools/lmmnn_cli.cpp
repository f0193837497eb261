#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "lmmnn/dataset_io.hpp"
#include "lmmnn/eigendecay.hpp"
#include "lmmnn/harness.hpp"
#include "lmmnn/model_io.hpp"

using namespace lmmnn;

namespace {

int cmd_simulate(const std::string& spec_path, SimSpec spec, const std::string& out) {
    if (!spec_path.empty()) spec = sim_spec_from_json(read_json(spec_path));
    spec.validate();
    const auto ds = gen(spec);
    write_dataset(ds, out);
    std::cout << "wrote " << out << " (" << ds.rows() << " rows, scenario " << ds.scenario << ")\n";
    return 0;
}

int cmd_run(const std::string& config_path, const std::string& out_flag) {
    auto config = ExperimentConfig::from_json(read_json(config_path));
    if (const char* env = std::getenv("LMMNN_OUTPUT_DIR"); env && *env) config.output_directory = env;
    if (!out_flag.empty()) config.output_directory = out_flag;
    const auto report = run(config);
    report_write(report, config.output_directory);
    std::cout << "method,metric,mean,se,n_ok,n_failed\n";
    for (const auto& s : report.summary())
        std::cout << s.method << ',' << s.metric << ',' << format_double(s.stats.mean) << ','
                  << format_double(s.stats.se) << ',' << s.stats.count << ',' << s.failed << '\n';
    for (const auto& c : report.cells)
        if (!c.ok()) std::cerr << "cell " << c.method << " rep " << c.replication << " failed: " << c.error << '\n';
    std::cout << "report in " << config.output_directory << '\n';
    return report.all_ok() ? 0 : 1;
}

int cmd_eigendecay(std::vector<std::size_t> sizes, std::size_t n, std::size_t q, std::uint64_t seed, double sigma2,
                   std::optional<double> sig2e, const std::string& out) {
    if (sizes.empty()) {
        if (n == 0 || q == 0) throw CLI::ValidationError("eigendecay", "give --sizes or both --n and --q");
        sizes.assign(q, 0);
        for (auto id : sample_cluster_sizes(n, q, seed)) ++sizes[id];
        std::erase(sizes, std::size_t{0});
    }
    SpectrumReport rep;
    if (sig2e) {
        const std::vector<CategoricalKernel> k{CategoricalKernel::from_sizes(sizes, sigma2)};
        rep = summed_spectrum(k, *sig2e);
    } else {
        rep = categorical_spectrum(sizes, sigma2);
    }
    std::ofstream file;
    if (!out.empty()) {
        file.open(out);
        if (!file) throw std::runtime_error("cannot write " + out);
    }
    std::ostream& os = out.empty() ? std::cout : file;
    os << "index,eigenvalue,fitted_value\n";
    for (std::size_t i = 0; i < rep.eigenvalues.size(); ++i) {
        const double fitted = rep.fit.c * std::pow(static_cast<double>(i + 1), -rep.fit.p);
        os << i + 1 << ',' << format_double(rep.eigenvalues[i]) << ',' << format_double(fitted) << '\n';
    }
    std::cerr << "C=" << rep.fit.c << " p=" << rep.fit.p;
    if (rep.max_deviation) std::cerr << " dense_check=" << *rep.max_deviation;
    std::cerr << '\n';
    return 0;
}

int cmd_predict(const std::string& model_path, const std::string& data_path, const std::string& out,
                const std::string& blup_out) {
    const auto model = read_json(model_path);
    const auto ds = read_dataset(data_path);
    const auto pred = predict_saved(model, ds);
    std::ofstream file;
    if (!out.empty()) {
        file.open(out);
        if (!file) throw std::runtime_error("cannot write " + out);
    }
    std::ostream& os = out.empty() ? std::cout : file;
    os << "row_id,y_true,y_pred\n";
    for (std::size_t i = 0; i < pred.size(); ++i)
        os << i << ',' << format_double(ds.y[i]) << ',' << format_double(pred[i]) << '\n';
    if (!blup_out.empty()) {
        if (!model.contains("b_hat")) throw std::runtime_error("model has no random effects to export");
        std::ofstream b(blup_out);
        if (!b) throw std::runtime_error("cannot write " + blup_out);
        b << "level_id,b_hat\n";
        const auto bh = model.at("b_hat").get<Vector>();
        for (std::size_t j = 0; j < bh.size(); ++j) b << j << ',' << format_double(bh[j]) << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LMMNN mixed-effects network toolkit"};
    app.require_subcommand(1);

    auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset (CSV + JSON sidecar)");
    std::string sim_json, sim_out, scenario = "single", gmode = "identity", split = "random";
    SimSpec ss;
    sim->add_option("--spec", sim_json, "SimSpec JSON file (overrides the flags below)");
    sim->add_option("--scenario", scenario, "single|multiple|longitudinal|spatial|combined|glmm");
    sim->add_option("--n", ss.n);
    sim->add_option("--p", ss.p);
    sim->add_option("--q", ss.q, "cardinalities")->delimiter(',');
    sim->add_option("--sig2e", ss.sig2e);
    sim->add_option("--sig2b", ss.sig2b, "RE variances")->delimiter(',');
    sim->add_option("--rhos", ss.rhos, "longitudinal correlations")->delimiter(',');
    sim->add_option("--g", gmode, "identity|linear|nonlinear");
    sim->add_option("--split", split, "random|future");
    sim->add_option("--seed", ss.seed);
    sim->add_option("-o,--out", sim_out, "output CSV path")->required();

    auto* runc = app.add_subcommand("run", "run an experiment from a JSON config");
    std::string config_path, run_out;
    runc->add_option("config", config_path, "experiment config JSON")->required()->check(CLI::ExistingFile);
    runc->add_option("-o,--output-dir", run_out, "overrides config and LMMNN_OUTPUT_DIR");

    auto* eig = app.add_subcommand("eigendecay", "spectrum of a categorical kernel and its power-law fit");
    std::vector<std::size_t> sizes;
    std::size_t en = 0, eq = 0;
    std::uint64_t eseed = 0;
    double sigma2 = 1.0, sig2e_v = 0.0;
    std::string eig_out;
    eig->add_option("--sizes", sizes, "cluster sizes, comma separated")->delimiter(',');
    eig->add_option("--n", en, "rows, with --q: Poisson(30) cluster sizes");
    eig->add_option("--q", eq);
    eig->add_option("--seed", eseed);
    eig->add_option("--sigma2", sigma2);
    auto* sig2e_opt = eig->add_option("--sig2e", sig2e_v, "add sig2e I and solve densely");
    eig->add_option("-o,--out", eig_out, "CSV path (stdout if absent)");

    auto* pred = app.add_subcommand("predict", "apply a saved model to a dataset");
    std::string model_path, data_path, pred_out, blup_out;
    pred->add_option("--model", model_path, "models/<method>_rep<r>.json")->required()->check(CLI::ExistingFile);
    pred->add_option("--data", data_path, "dataset CSV")->required()->check(CLI::ExistingFile);
    pred->add_option("-o,--out", pred_out, "CSV path (stdout if absent)");
    pred->add_option("--blup-out", blup_out, "also write level_id,b_hat");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*sim) {
            ss.scenario = parse_scenario(scenario);
            ss.g = parse_g_transform(gmode);
            ss.split = parse_split_mode(split);
            return cmd_simulate(sim_json, ss, sim_out);
        }
        if (*runc) return cmd_run(config_path, run_out);
        if (*eig)
            return cmd_eigendecay(sizes, en, eq, eseed, sigma2,
                                  sig2e_opt->count() ? std::optional<double>(sig2e_v) : std::nullopt, eig_out);
        if (*pred) return cmd_predict(model_path, data_path, pred_out, blup_out);
    } catch (const CLI::Error& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
