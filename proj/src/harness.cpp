#include "lmmnn/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "lmmnn/dataset_io.hpp"
#include "lmmnn/glmm.hpp"
#include "lmmnn/model_io.hpp"
#include "lmmnn/nll_loss.hpp"

namespace lmmnn {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::none_of(known.begin(), known.end(), [&](const char* k) { return it.key() == k; }))
            throw std::invalid_argument(where + ": unknown field '" + it.key() + "'");
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    reject_unknown(j,
                   {"sim_spec", "dataset_path", "methods", "replications", "net_architecture", "train_config",
                    "output_directory", "ohe_max_columns"},
                   "config");
    ExperimentConfig c;
    if (j.contains("sim_spec")) c.sim_spec = sim_spec_from_json(j.at("sim_spec"));
    if (j.contains("dataset_path")) c.dataset_path = j.at("dataset_path").get<std::string>();
    if (j.contains("methods")) c.methods = j.at("methods").get<std::vector<std::string>>();
    if (j.contains("replications")) c.replications = j.at("replications").get<std::size_t>();
    if (j.contains("net_architecture")) {
        const auto& n = j.at("net_architecture");
        reject_unknown(n, {"hidden_layers", "dropout"}, "net_architecture");
        if (n.contains("hidden_layers")) c.net_architecture.hidden = n.at("hidden_layers").get<std::vector<std::size_t>>();
        if (n.contains("dropout")) c.net_architecture.dropout = n.at("dropout").get<double>();
    }
    if (j.contains("train_config")) {
        const auto& t = j.at("train_config");
        reject_unknown(t,
                       {"batch_size", "max_epochs", "patience", "validation_fraction", "seed", "optimizer",
                        "learning_rate", "quadrature_nodes"},
                       "train_config");
        auto& tc = c.train_config;
        tc.batch_size = t.value("batch_size", tc.batch_size);
        tc.max_epochs = t.value("max_epochs", tc.max_epochs);
        tc.patience = t.value("patience", tc.patience);
        tc.validation_fraction = t.value("validation_fraction", tc.validation_fraction);
        tc.seed = t.value("seed", tc.seed);
        tc.quadrature_nodes = t.value("quadrature_nodes", tc.quadrature_nodes);
        tc.optimizer.learning_rate = t.value("learning_rate", tc.optimizer.learning_rate);
        if (t.contains("optimizer")) {
            const auto a = t.at("optimizer").get<std::string>();
            if (a == "adam")
                tc.optimizer.algorithm = Algorithm::Adam;
            else if (a == "sgd")
                tc.optimizer.algorithm = Algorithm::Sgd;
            else
                throw std::invalid_argument("train_config: unknown optimizer '" + a + "'");
        }
    }
    if (j.contains("output_directory")) c.output_directory = j.at("output_directory").get<std::string>();
    if (j.contains("ohe_max_columns")) c.ohe_max_columns = j.at("ohe_max_columns").get<std::size_t>();
    c.validate();
    return c;
}

json ExperimentConfig::to_json() const {
    json j{{"methods", methods},
           {"replications", replications},
           {"net_architecture", {{"hidden_layers", net_architecture.hidden}, {"dropout", net_architecture.dropout}}},
           {"train_config",
            {{"batch_size", train_config.batch_size},
             {"max_epochs", train_config.max_epochs},
             {"patience", train_config.patience},
             {"validation_fraction", train_config.validation_fraction},
             {"seed", train_config.seed},
             {"optimizer", train_config.optimizer.algorithm == Algorithm::Adam ? "adam" : "sgd"},
             {"learning_rate", train_config.optimizer.learning_rate},
             {"quadrature_nodes", train_config.quadrature_nodes}}},
           {"output_directory", output_directory},
           {"ohe_max_columns", ohe_max_columns}};
    if (sim_spec) j["sim_spec"] = lmmnn::to_json(*sim_spec);
    if (dataset_path) j["dataset_path"] = *dataset_path;
    return j;
}

void ExperimentConfig::validate() const {
    if (methods.empty()) throw std::invalid_argument("config: method list is empty");
    for (const auto& m : methods) {
        if (std::find(kMethods.begin(), kMethods.end(), m) == kMethods.end())
            throw std::invalid_argument("config: unknown method '" + m + "'");
        if (std::count(methods.begin(), methods.end(), m) > 1)
            throw std::invalid_argument("config: method '" + m + "' listed twice");
    }
    if (replications < 1) throw std::invalid_argument("config: replications must be >= 1");
    if (sim_spec.has_value() == dataset_path.has_value())
        throw std::invalid_argument("config: give exactly one of sim_spec and dataset_path");
    if (sim_spec) sim_spec->validate();
    for (auto h : net_architecture.hidden)
        if (h == 0) throw std::invalid_argument("config: hidden layer widths must be positive");
    if (!(net_architecture.dropout >= 0.0 && net_architecture.dropout < 1.0))
        throw std::invalid_argument("config: dropout must be in [0, 1)");
    train_config.validate();
}

// ---------------------------------------------------------------------------
// Method inputs
// ---------------------------------------------------------------------------

std::size_t embedding_dim(std::size_t q) { return std::min<std::size_t>(100, (q + 9) / 10); }

namespace {

std::vector<std::size_t> id_cardinalities(const CovarianceSpec& spec) {
    std::vector<std::size_t> out;
    for (const auto& t : layout(spec).terms) {
        if (t.term->kind == CovKind::MultipleCategorical)
            out.insert(out.end(), t.term->cardinalities.begin(), t.term->cardinalities.end());
        else
            out.push_back(t.term->cardinalities[0]);
    }
    return out;
}

// X, then t for longitudinal data.
DenseMatrix base_features(const MixedDataset& ds, bool append_t) {
    if (!append_t) return ds.x;
    const std::size_t n = ds.rows(), p = ds.x.cols();
    DenseMatrix x(n, p + 1);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(ds.x.row(i).begin(), ds.x.row(i).end(), x.row(i).begin());
        x(i, p) = ds.design.times.at(i);
    }
    return x;
}

}  // namespace

DenseMatrix baseline_inputs(const std::string& method, const MixedDataset& ds, const json& enc) {
    const bool append_t = enc.at("append_t").get<bool>();
    const auto qs = enc.at("id_q").get<std::vector<std::size_t>>();
    const DenseMatrix base = base_features(ds, append_t);
    const std::size_t n = ds.rows(), w = base.cols();
    if (ds.design.ids.size() < qs.size()) throw DimensionMismatch("dataset has fewer id columns than the model");
    if (method == "ignore") return base;
    if (method == "ohe") {
        std::size_t total = w;
        for (auto q : qs) total += q;
        DenseMatrix x(n, total);
        for (std::size_t i = 0; i < n; ++i) {
            std::copy(base.row(i).begin(), base.row(i).end(), x.row(i).begin());
            std::size_t off = w;
            for (std::size_t k = 0; k < qs.size(); ++k) {
                const std::size_t id = ds.design.ids[k][i];
                if (id < qs[k]) x(i, off + id) = 1.0;  // unseen level: all zeros
                off += qs[k];
            }
        }
        return x;
    }
    if (method == "embeddings") {
        DenseMatrix x(n, qs.size() + w);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < qs.size(); ++k) {
                const std::size_t id = ds.design.ids[k][i];
                if (id >= qs[k]) throw std::out_of_range("embeddings: level " + std::to_string(id) + " unseen in training");
                x(i, k) = static_cast<double>(id);
            }
            std::copy(base.row(i).begin(), base.row(i).end(), x.row(i).begin() + static_cast<long>(qs.size()));
        }
        return x;
    }
    throw std::invalid_argument("no baseline inputs for method '" + method + "'");
}

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-std::clamp(z, -30.0, 30.0))); }

double score(const MixedDataset& ds, std::span<const std::size_t> test, std::span<const double> pred) {
    Vector y;
    for (auto r : test) y.push_back(ds.y[r]);
    return ds.binary ? auc(pred, y) : mse(y, pred);
}

json theta_json(const std::vector<std::string>& names, const Vector& values) {
    return {{"names", names}, {"values", values}};
}

CellResult run_baseline(const std::string& method, const MixedDataset& ds, std::span<const std::size_t> train,
                        std::span<const std::size_t> test, const MethodOptions& opt) {
    const auto qs = id_cardinalities(ds.spec);
    json enc{{"append_t", ds.scenario == "longitudinal"}, {"id_q", qs}};
    if (method == "ohe") {
        std::size_t width = 0;
        for (auto q : qs) width += q;
        if (width > opt.ohe_max_columns)
            throw std::invalid_argument("ohe: " + std::to_string(width) + " one-hot columns exceed the cap of " +
                                        std::to_string(opt.ohe_max_columns));
    }
    const DenseMatrix x = baseline_inputs(method, ds, enc);

    std::vector<LayerSpec> layers;
    if (method == "embeddings") {
        std::size_t col = 0;
        for (auto q : qs) {
            const std::size_t d = embedding_dim(q);
            layers.push_back(LayerSpec::embedding(q, d, col));
            col += d;
        }
    }
    const auto mlp = mlp_layers(opt.net, 1);
    layers.insert(layers.end(), mlp.begin(), mlp.end());

    Trainable model;
    model.f = FeedForwardNet(x.cols(), std::move(layers), derive_seed(opt.train.seed, "f"));
    const Objective obj = ds.binary ? bce_objective(ds.y) : mse_objective(ds.y);
    const std::size_t bs = opt.train.batch_size;
    const Batcher batcher = [bs](std::span<const std::size_t> rows, Rng* rng) { return random_batches(rows, bs, rng); };
    auto hist = fit(model, FitInputs{x, nullptr, train}, obj, batcher, opt.train);

    const DenseMatrix xt = gather_rows(x, test);
    auto pred = model.f.predict(xt);
    if (ds.binary)
        for (auto& v : pred) v = sigmoid(v);

    CellResult c;
    c.metric = ds.binary ? "auc" : "mse";
    c.value = score(ds, test, pred);
    c.epochs = hist.rows.size();
    c.best_epoch = hist.best_epoch;
    c.history = std::move(hist);
    c.model = {{"method", method},
               {"kind", "baseline"},
               {"loss", ds.binary ? "bce" : "mse"},
               {"encoding", enc},
               {"f", net_to_json(model.f)}};
    return c;
}

CellResult run_glmm(const MixedDataset& ds, std::span<const std::size_t> train, std::span<const std::size_t> test,
                    const MethodOptions& opt) {
    if (ds.spec.kind != CovKind::RandomIntercepts) throw std::invalid_argument("glmm needs a single categorical");
    const auto& ids = ds.design.ids.at(0);
    const std::size_t q = ds.spec.cardinalities[0];
    const auto fitres = train_glmm(GlmmData{ds.x, ids, q, ds.y, train}, opt.net, opt.train);

    const auto ftrain = fitres.f.predict(gather_rows(ds.x, train));
    Vector ytrain;
    std::vector<std::size_t> idtrain, idtest;
    for (auto r : train) {
        ytrain.push_back(ds.y[r]);
        idtrain.push_back(ids[r]);
    }
    for (auto r : test) idtest.push_back(ids[r]);
    const auto rule = hermite_rule(opt.train.quadrature_nodes);
    const auto b = predict_b_quadrature(ftrain, ytrain, std::sqrt(fitres.sig2b), ClusterIndex::build(idtrain, q), rule);
    const auto prob = predict_prob(fitres.f.predict(gather_rows(ds.x, test)), idtest, b);

    CellResult c;
    c.metric = "auc";
    c.value = score(ds, test, prob);
    c.theta_names = {"sig2b"};
    c.theta = {fitres.sig2b};
    c.epochs = fitres.history.rows.size();
    c.best_epoch = fitres.history.best_epoch;
    c.history = fitres.history;
    c.model = {{"method", "lmmnn"},
               {"kind", "glmm"},
               {"covariance", to_json(ds.spec)},
               {"theta", theta_json(c.theta_names, c.theta)},
               {"f", net_to_json(fitres.f)},
               {"b_hat", b}};
    return c;
}

CellResult run_lmmnn(const std::string& method, const MixedDataset& ds, std::span<const std::size_t> train,
                     std::span<const std::size_t> test, const MethodOptions& opt) {
    CovarianceSpec spec = ds.spec;
    if (method == "lmmnn-e") {
        if (spec.kind != CovKind::RandomIntercepts && spec.kind != CovKind::SpatialRBF)
            throw std::invalid_argument("lmmnn-e supports single categorical and spatial data only");
        spec = spec.with_learned_embedding(embedding_dim(spec.cardinalities[0]));
    }
    auto fitres = lmmnn::train(LmmnnData{ds.x, ds.design, ds.y, train}, spec, opt.net, opt.train);

    FittedModel fm;
    fm.spec = spec;
    fm.theta = fitres.theta;
    fm.f = fitres.f;
    fm.g = fitres.g;
    fm.train_design = ds.design.subset(train);
    const auto ftrain = fm.f.predict(gather_rows(ds.x, train));
    for (std::size_t i = 0; i < train.size(); ++i) fm.residuals.push_back(ds.y[train[i]] - ftrain[i]);

    std::optional<DenseMatrix> gin_test;
    if (spec.learned_g()) {
        const auto gin = g_input(spec, ds.design);
        fm.train_g = fm.g->forward(gather_rows(gin, train), false);
        gin_test = gather_rows(gin, test);
    }
    BlupOptions bopt;
    bopt.seed = derive_seed(opt.train.seed, "blup");
    const Vector b = (spec.kind == CovKind::RandomIntercepts && !spec.learned_g()) ? blup_intercepts_fast(fm)
                                                                                   : blup(fm, bopt);
    const auto pred = predict(fm, b, gather_rows(ds.x, test), ds.design.subset(test), gin_test ? &*gin_test : nullptr);

    CellResult c;
    c.metric = "mse";
    c.value = score(ds, test, pred);
    c.theta_names = theta_names(spec);
    c.theta = fm.theta.constrained();
    c.epochs = fitres.history.rows.size();
    c.best_epoch = fitres.history.best_epoch;
    c.history = fitres.history;
    c.model = {{"method", method},
               {"kind", "gaussian"},
               {"covariance", to_json(spec)},
               {"theta", theta_json(c.theta_names, c.theta)},
               {"f", net_to_json(fm.f)},
               {"b_hat", b}};
    if (fm.g) c.model["g"] = net_to_json(*fm.g);
    return c;
}

}  // namespace

CellResult run_method(const std::string& method, const MixedDataset& ds, std::span<const std::size_t> train,
                      std::span<const std::size_t> test, const MethodOptions& options) {
    if (train.empty() || test.empty()) throw std::invalid_argument("run_method: empty train or test split");
    CellResult c;
    if (method == "lmmnn" || method == "lmmnn-e") {
        if (ds.binary) {
            if (method == "lmmnn-e") throw std::invalid_argument("lmmnn-e is not available for binary data");
            c = run_glmm(ds, train, test, options);
        } else {
            c = run_lmmnn(method, ds, train, test, options);
        }
    } else if (method == "ignore" || method == "ohe" || method == "embeddings") {
        c = run_baseline(method, ds, train, test, options);
    } else {
        throw std::invalid_argument("unknown method '" + method + "'");
    }
    c.method = method;
    if (!std::isfinite(c.value)) throw std::runtime_error(method + ": non-finite test metric");
    return c;
}

// ---------------------------------------------------------------------------
// Experiment
// ---------------------------------------------------------------------------

namespace {

std::uint64_t split_digest(std::span<const std::size_t> train, std::span<const std::size_t> test) {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
    auto mix = [&h](std::uint64_t v) {
        for (int k = 0; k < 8; ++k) {
            h ^= (v >> (8 * k)) & 0xff;
            h *= 1099511628211ULL;
        }
    };
    for (auto r : train) mix(r);
    mix(~0ULL);
    for (auto r : test) mix(r);
    return h;
}

}  // namespace

ExperimentReport run(const ExperimentConfig& config) {
    config.validate();
    ExperimentReport report;
    report.methods = config.methods;
    std::optional<MixedDataset> fixed;
    if (config.dataset_path) fixed = read_dataset(*config.dataset_path);

    const std::size_t reps = config.replications, nm = config.methods.size();
    std::vector<CellResult> cells(reps * nm);
    const long nreps = static_cast<long>(reps);
#pragma omp parallel for schedule(dynamic, 1)
    for (long rl = 0; rl < nreps; ++rl) {
        const auto r = static_cast<std::size_t>(rl);
        std::optional<MixedDataset> ds;
        std::string data_error;
        try {
            if (config.sim_spec) {
                SimSpec s = *config.sim_spec;
                s.seed = derive_seed(config.sim_spec->seed, "replication", r);
                ds = gen(s);
            } else {
                ds = *fixed;
                if (ds->split_mode != "future")
                    random_split(ds->rows(), derive_seed(config.train_config.seed, "split", r), ds->train_rows,
                                 ds->test_rows);
            }
        } catch (const std::exception& e) {
            data_error = std::string("data: ") + e.what();
        }
        for (std::size_t mi = 0; mi < nm; ++mi) {
            const auto& method = config.methods[mi];
            CellResult& cell = cells[r * nm + mi];
            const auto t0 = std::chrono::steady_clock::now();
            if (!data_error.empty()) {
                cell.error = data_error;
            } else {
                try {
                    MethodOptions opt{config.net_architecture, config.train_config, config.ohe_max_columns};
                    opt.train.seed = derive_seed(config.train_config.seed, method, r);
                    cell = run_method(method, *ds, ds->train_rows, ds->test_rows, opt);
                } catch (const std::exception& e) {
                    cell = CellResult{};
                    cell.error = e.what();
                }
            }
            cell.method = method;
            cell.replication = r;
            if (ds) cell.split_digest = split_digest(ds->train_rows, ds->test_rows);
            if (cell.metric.empty()) cell.metric = (ds && ds->binary) ? "auc" : "mse";
            if (!cell.ok()) cell.value = std::nan("");
            cell.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        }
    }
    report.cells = std::move(cells);
    return report;
}

std::vector<SummaryRow> ExperimentReport::summary() const {
    std::vector<SummaryRow> out;
    for (const auto& m : methods) {
        SummaryRow row;
        row.method = m;
        Vector values;
        for (const auto& c : cells) {
            if (c.method != m) continue;
            row.metric = c.metric;
            if (c.ok())
                values.push_back(c.value);
            else
                ++row.failed;
        }
        row.stats = aggregate(values);
        out.push_back(row);
    }
    return out;
}

bool ExperimentReport::all_ok() const {
    return std::all_of(cells.begin(), cells.end(), [](const CellResult& c) { return c.ok(); });
}

const CellResult* ExperimentReport::find(const std::string& method, std::size_t replication) const {
    for (const auto& c : cells)
        if (c.method == method && c.replication == replication) return &c;
    return nullptr;
}

// ---------------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------------

namespace {

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch == '\n' ? ' ' : ch;
    }
    return out + '"';
}

std::string num(double v) { return std::isnan(v) ? std::string("nan") : format_double(v); }

std::ofstream open_out(const fs::path& p) {
    std::ofstream out(p);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    return out;
}

// Splits one CSV line honoring double quotes.
std::vector<std::string> parse_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (ch == '"') {
                quoted = false;
            } else {
                cur += ch;
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(std::move(cur));
    return out;
}

void write_summary(const std::vector<SummaryRow>& rows, const fs::path& p) {
    auto out = open_out(p);
    out << "method,metric,mean,se,n_ok,n_failed\n";
    for (const auto& r : rows)
        out << r.method << ',' << r.metric << ',' << num(r.stats.mean) << ',' << num(r.stats.se) << ','
            << r.stats.count << ',' << r.failed << '\n';
}

}  // namespace

void report_write(const ExperimentReport& report, const std::string& dir) {
    const fs::path root(dir);
    std::error_code ec;
    fs::create_directories(root / "history", ec);
    if (ec) throw std::runtime_error("cannot create " + (root / "history").string() + ": " + ec.message());
    fs::create_directories(root / "models", ec);
    if (ec) throw std::runtime_error("cannot create " + (root / "models").string() + ": " + ec.message());

    {
        auto out = open_out(root / "results.csv");
        out << "method,replication,metric,value,epochs,best_epoch,error\n";
        for (const auto& c : report.cells)
            out << c.method << ',' << c.replication << ',' << c.metric << ',' << num(c.value) << ',' << c.epochs << ','
                << c.best_epoch << ',' << csv_field(c.error) << '\n';
    }
    write_summary(report.summary(), root / "summary.csv");
    {
        std::vector<std::string> names;
        for (const auto& c : report.cells)
            for (const auto& n : c.theta_names)
                if (std::find(names.begin(), names.end(), n) == names.end()) names.push_back(n);
        auto out = open_out(root / "theta.csv");
        out << "method,replication";
        for (const auto& n : names) out << ',' << n;
        out << '\n';
        for (const auto& c : report.cells) {
            out << c.method << ',' << c.replication;
            for (const auto& n : names) {
                out << ',';
                const auto it = std::find(c.theta_names.begin(), c.theta_names.end(), n);
                if (it != c.theta_names.end()) out << num(c.theta[static_cast<std::size_t>(it - c.theta_names.begin())]);
            }
            out << '\n';
        }
    }
    {
        auto out = open_out(root / "timing.csv");
        out << "method,replication,wall_seconds\n";
        for (const auto& c : report.cells) out << c.method << ',' << c.replication << ',' << c.wall_seconds << '\n';
    }
    for (const auto& c : report.cells) {
        if (!c.ok()) continue;
        const std::string stem = c.method + "_rep" + std::to_string(c.replication);
        c.history.write_csv((root / "history" / (stem + ".csv")).string());
        write_json(c.model, (root / "models" / (stem + ".json")).string());
    }
}

std::vector<SummaryRow> summarize_results_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string line;
    std::getline(in, line);
    ExperimentReport rep;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = parse_csv_line(line);
        if (f.size() != 7) throw std::runtime_error(path + ": malformed row");
        CellResult c;
        c.method = f[0];
        c.replication = std::stoul(f[1]);
        c.metric = f[2];
        c.value = f[3] == "nan" ? std::nan("") : std::stod(f[3]);
        c.error = f[6];
        if (std::find(rep.methods.begin(), rep.methods.end(), c.method) == rep.methods.end())
            rep.methods.push_back(c.method);
        rep.cells.push_back(std::move(c));
    }
    return rep.summary();
}

// ---------------------------------------------------------------------------
// Saved models
// ---------------------------------------------------------------------------

Vector predict_saved(const json& model, const MixedDataset& ds) {
    const auto kind = model.at("kind").get<std::string>();
    const auto f = net_from_json(model.at("f"));
    if (kind == "baseline") {
        const auto x = baseline_inputs(model.at("method").get<std::string>(), ds, model.at("encoding"));
        auto out = f.predict(x);
        if (model.at("loss").get<std::string>() == "bce")
            for (auto& v : out) v = sigmoid(v);
        return out;
    }
    const auto spec = covariance_spec_from_json(model.at("covariance"));
    const auto b = model.at("b_hat").get<Vector>();
    if (kind == "glmm") return predict_prob(f.predict(ds.x), ds.design.ids.at(0), b);
    if (kind != "gaussian") throw std::invalid_argument("unknown saved model kind '" + kind + "'");

    FittedModel fm;
    fm.spec = spec;
    const auto theta = model.at("theta").at("values").get<Vector>();
    const auto lay = layout(spec);
    if (theta.size() != lay.theta_size()) throw std::invalid_argument("saved theta does not match the covariance");
    const auto psi_end = theta.begin() + 1 + static_cast<long>(lay.psi_count);
    fm.theta = VarianceComponents{theta[0], Vector(theta.begin() + 1, psi_end), Vector(psi_end, theta.end())};
    fm.f = f;
    std::optional<DenseMatrix> gin;
    if (spec.learned_g()) {
        fm.g = net_from_json(model.at("g"));
        gin = g_input(spec, ds.design);
    }
    return predict(fm, b, ds.x, ds.design, gin ? &*gin : nullptr);
}

}  // namespace lmmnn
