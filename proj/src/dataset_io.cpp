#include "lmmnn/dataset_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace lmmnn {

using nlohmann::json;

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

namespace {

double parse_double(std::string_view s, std::size_t line) {
    double v = 0.0;
    // from_chars rejects a leading '+'
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw std::runtime_error("line " + std::to_string(line) + ": cannot parse number '" + std::string(s) + "'");
    return v;
}

std::size_t parse_id(std::string_view s, std::size_t line) {
    const double v = parse_double(s, line);
    if (!(v >= 0.0) || v != std::floor(v))
        throw std::runtime_error("line " + std::to_string(line) + ": id must be a non-negative integer");
    return static_cast<std::size_t>(v);
}

std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        out.push_back(line.substr(start, pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

std::string scenario_from_header(const std::vector<std::string>& cols) {
    auto has = [&](const std::string& c) { return std::find(cols.begin(), cols.end(), c) != cols.end(); };
    if (has("lat") && has("z_id_0")) return "combined";
    if (has("lat")) return "spatial";
    if (has("t")) return "longitudinal";
    if (has("z_id_0")) return "multiple";
    if (has("z_id")) return "single";
    throw std::runtime_error("cannot infer the scenario from the CSV header");
}

std::size_t id_column_count(const CovarianceSpec& spec) { return layout(spec).id_columns; }

}  // namespace

std::vector<std::string> scenario_columns(const std::string& scenario, std::size_t id_columns) {
    if (scenario == "single" || scenario == "glmm") return {"z_id"};
    if (scenario == "multiple") {
        std::vector<std::string> c;
        for (std::size_t k = 0; k < id_columns; ++k) c.push_back("z_id_" + std::to_string(k));
        return c;
    }
    if (scenario == "longitudinal") return {"z_id", "t"};
    if (scenario == "spatial") return {"lat", "lon"};
    if (scenario == "combined") return {"z_id_0", "z_id_1", "lat", "lon"};
    throw std::invalid_argument("unknown scenario '" + scenario + "'");
}

json to_json(const SimSpec& s) {
    return json{{"scenario", to_string(s.scenario)},
                {"n", s.n},
                {"p", s.p},
                {"q", s.q},
                {"sig2e", s.sig2e},
                {"sig2b", s.sig2b},
                {"rhos", s.rhos},
                {"g_mode", to_string(s.g)},
                {"split_mode", to_string(s.split)},
                {"seed", s.seed}};
}

SimSpec sim_spec_from_json(const json& j) {
    SimSpec s;
    if (j.contains("scenario")) s.scenario = parse_scenario(j.at("scenario").get<std::string>());
    if (s.scenario == Scenario::Spatial) s.sig2b = {1.0, 1.0};
    if (s.scenario == Scenario::Longitudinal) s.sig2b = {1.0, 1.0, 1.0};
    if (s.scenario == Scenario::Combined) {
        s.q = {100, 100, 100};
        s.sig2b = {1.0, 1.0, 1.0, 1.0};
    }
    if (s.scenario == Scenario::MultipleCategorical) {
        s.q = {100, 100};
        s.sig2b = {1.0, 1.0};
    }
    if (j.contains("n")) s.n = j.at("n").get<std::size_t>();
    if (j.contains("p")) s.p = j.at("p").get<std::size_t>();
    if (j.contains("q")) {
        if (j.at("q").is_array())
            s.q = j.at("q").get<std::vector<std::size_t>>();
        else
            s.q = {j.at("q").get<std::size_t>()};
    }
    if (j.contains("sig2e")) s.sig2e = j.at("sig2e").get<double>();
    if (j.contains("sig2b")) {
        if (j.at("sig2b").is_array())
            s.sig2b = j.at("sig2b").get<Vector>();
        else
            s.sig2b = {j.at("sig2b").get<double>()};
    }
    if (j.contains("rhos")) s.rhos = j.at("rhos").get<Vector>();
    if (j.contains("g_mode")) s.g = parse_g_transform(j.at("g_mode").get<std::string>());
    if (j.contains("split_mode")) s.split = parse_split_mode(j.at("split_mode").get<std::string>());
    if (j.contains("seed")) s.seed = j.at("seed").get<std::uint64_t>();
    for (auto it = j.begin(); it != j.end(); ++it) {
        static const char* known[] = {"scenario", "n",     "p",      "q",          "sig2e",
                                      "sig2b",    "rhos",  "g_mode", "split_mode", "seed"};
        if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return it.key() == k; }) ==
            std::end(known))
            throw std::invalid_argument("sim_spec: unknown field '" + it.key() + "'");
    }
    s.validate();
    return s;
}

json to_json(const CovarianceSpec& s) {
    json j{{"kind", to_string(s.kind)}};
    if (s.kind == CovKind::Combined) {
        j["components"] = json::array();
        for (const auto& c : s.components) j["components"].push_back(to_json(c));
        return j;
    }
    j["cardinalities"] = s.cardinalities;
    if (s.kind == CovKind::MultipleCategorical) j["nested"] = s.nested;
    if (s.kind == CovKind::Longitudinal) {
        j["poly_order"] = s.poly_order;
        j["correlated"] = json::array();
        for (const auto& p : s.correlated) j["correlated"].push_back({p.first, p.second});
    }
    if (s.learned_g()) j["g_dim"] = s.g_dim;
    return j;
}

CovarianceSpec covariance_spec_from_json(const json& j) {
    const auto kind = j.at("kind").get<std::string>();
    CovarianceSpec s;
    if (kind == "combined") {
        std::vector<CovarianceSpec> parts;
        for (const auto& c : j.at("components")) parts.push_back(covariance_spec_from_json(c));
        s = CovarianceSpec::combined(std::move(parts));
    } else {
        const auto q = j.at("cardinalities").get<std::vector<std::size_t>>();
        if (kind == "random_intercepts")
            s = CovarianceSpec::random_intercepts(q.at(0));
        else if (kind == "multiple_categorical")
            s = CovarianceSpec::multiple_categorical(q, j.value("nested", false));
        else if (kind == "longitudinal") {
            std::vector<CorrelatedPair> pairs;
            for (const auto& p : j.at("correlated")) pairs.push_back({p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>()});
            s = CovarianceSpec::longitudinal(q.at(0), j.at("poly_order").get<std::size_t>(), pairs);
        } else if (kind == "spatial_rbf")
            s = CovarianceSpec::spatial_rbf(q.at(0));
        else
            throw std::invalid_argument("unknown covariance kind '" + kind + "'");
        if (j.contains("g_dim")) s = s.with_learned_embedding(j.at("g_dim").get<std::size_t>());
    }
    s.validate();
    return s;
}

void write_dataset(const MixedDataset& ds, const std::string& csv_path) {
    const std::size_t n = ds.rows(), p = ds.x.cols();
    const auto cols = scenario_columns(ds.scenario, id_column_count(ds.spec));
    {
        std::ofstream out(csv_path);
        if (!out) throw std::runtime_error("cannot write " + csv_path);
        for (std::size_t j = 0; j < p; ++j) out << "X_" << j << ',';
        for (const auto& c : cols) out << c << ',';
        out << "y\n";
        std::string line;
        for (std::size_t i = 0; i < n; ++i) {
            line.clear();
            for (std::size_t j = 0; j < p; ++j) line += format_double(ds.x(i, j)) + ',';
            auto loc = [&](std::size_t col) {
                const auto& l = ds.design.locations.at(ds.design.ids[col][i]);
                line += format_double(l.x) + ',' + format_double(l.y) + ',';
            };
            if (ds.scenario == "spatial") {
                loc(0);
            } else if (ds.scenario == "combined") {
                line += std::to_string(ds.design.ids[0][i]) + ',' + std::to_string(ds.design.ids[1][i]) + ',';
                loc(2);
            } else {
                for (std::size_t c = 0; c < ds.design.ids.size(); ++c) line += std::to_string(ds.design.ids[c][i]) + ',';
                if (ds.scenario == "longitudinal") line += format_double(ds.design.times[i]) + ',';
            }
            line += format_double(ds.y[i]);
            out << line << '\n';
        }
        if (!out) throw std::runtime_error("write failed for " + csv_path);
    }

    json side{{"scenario", ds.scenario}, {"binary", ds.binary}, {"covariance", to_json(ds.spec)}};
    if (ds.sim) {
        side["sim_spec"] = to_json(*ds.sim);
        side["seeds"] = {{"master", ds.sim->seed}};
    }
    if (ds.truth) {
        side["theta"] = {{"names", theta_names(ds.spec)}, {"values", ds.truth->theta.constrained()}};
        if (ds.sim && ds.sim->g != GTransform::Identity) side["theta"].erase("names");
    }
    json locs = json::array();
    for (const auto& l : ds.design.locations) locs.push_back({l.x, l.y});
    side["locations"] = locs;
    side["split"] = {{"mode", ds.split_mode}, {"test_rows", ds.test_rows}};
    std::ofstream js(csv_path + ".json");
    if (!js) throw std::runtime_error("cannot write " + csv_path + ".json");
    js << side.dump(2) << '\n';
}

MixedDataset read_dataset(const std::string& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw std::runtime_error("cannot open dataset " + csv_path);
    std::string header;
    if (!std::getline(in, header)) throw std::runtime_error(csv_path + ": empty file");
    std::vector<std::string> cols;
    for (auto c : split(header)) cols.emplace_back(c);

    json side;
    const std::string side_path = csv_path + ".json";
    if (std::filesystem::exists(side_path)) {
        std::ifstream js(side_path);
        side = json::parse(js);
    }

    MixedDataset ds;
    ds.scenario = side.contains("scenario") ? side.at("scenario").get<std::string>() : scenario_from_header(cols);
    ds.binary = side.value("binary", false);

    std::size_t p = 0;
    while (p < cols.size() && cols[p] == "X_" + std::to_string(p)) ++p;
    if (p < 2) throw std::runtime_error(csv_path + ": expected columns X_0, X_1, ...");
    if (cols.back() != "y") throw std::runtime_error(csv_path + ": last column must be y");
    const std::vector<std::string> extra(cols.begin() + static_cast<long>(p), cols.end() - 1);
    const std::size_t id_cols = ds.scenario == "multiple" ? extra.size() : 0;
    if (extra != scenario_columns(ds.scenario, id_cols))
        throw std::runtime_error(csv_path + ": scenario columns do not match scenario '" + ds.scenario + "'");

    const bool spatial = ds.scenario == "spatial" || ds.scenario == "combined";
    std::map<std::pair<double, double>, std::size_t> loc_index;
    if (side.contains("locations"))
        for (const auto& l : side.at("locations")) {
            Location loc{l.at(0).get<double>(), l.at(1).get<double>()};
            loc_index.emplace(std::make_pair(loc.x, loc.y), ds.design.locations.size());
            ds.design.locations.push_back(loc);
        }
    const std::size_t n_ids = ds.scenario == "combined" ? 3 : (ds.scenario == "multiple" ? id_cols : 1);
    ds.design.ids.assign(n_ids, {});

    Vector xs;
    std::string line;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split(line);
        if (f.size() != cols.size())
            throw std::runtime_error(csv_path + ": line " + std::to_string(lineno) + " has " + std::to_string(f.size()) +
                                     " fields, expected " + std::to_string(cols.size()));
        for (std::size_t j = 0; j < p; ++j) xs.push_back(parse_double(f[j], lineno));
        std::size_t c = p;
        if (ds.scenario == "combined") {
            ds.design.ids[0].push_back(parse_id(f[c++], lineno));
            ds.design.ids[1].push_back(parse_id(f[c++], lineno));
        } else if (!spatial) {
            for (std::size_t k = 0; k < n_ids; ++k) ds.design.ids[k].push_back(parse_id(f[c++], lineno));
            if (ds.scenario == "longitudinal") ds.design.times.push_back(parse_double(f[c++], lineno));
        }
        if (spatial) {
            const double lat = parse_double(f[c++], lineno), lon = parse_double(f[c++], lineno);
            auto [it, fresh] = loc_index.emplace(std::make_pair(lat, lon), ds.design.locations.size());
            if (fresh) ds.design.locations.push_back({lat, lon});
            ds.design.ids[n_ids - 1].push_back(it->second);
        }
        ds.y.push_back(parse_double(f[c], lineno));
    }
    const std::size_t n = ds.y.size();
    if (n == 0) throw std::runtime_error(csv_path + ": no data rows");
    ds.x = DenseMatrix(n, p, std::move(xs));

    if (side.contains("covariance")) {
        ds.spec = covariance_spec_from_json(side.at("covariance"));
    } else {
        auto q_of = [&](std::size_t c) {
            return *std::max_element(ds.design.ids[c].begin(), ds.design.ids[c].end()) + 1;
        };
        if (ds.scenario == "single" || ds.scenario == "glmm")
            ds.spec = CovarianceSpec::random_intercepts(q_of(0));
        else if (ds.scenario == "multiple") {
            std::vector<std::size_t> qs;
            for (std::size_t k = 0; k < n_ids; ++k) qs.push_back(q_of(k));
            ds.spec = CovarianceSpec::multiple_categorical(qs);
        } else if (ds.scenario == "longitudinal")
            ds.spec = CovarianceSpec::longitudinal(q_of(0), 3, {{0, 1}, {0, 2}});
        else if (ds.scenario == "spatial")
            ds.spec = CovarianceSpec::spatial_rbf(ds.design.locations.size());
        else
            ds.spec = CovarianceSpec::combined({CovarianceSpec::random_intercepts(q_of(0)),
                                                CovarianceSpec::random_intercepts(q_of(1)),
                                                CovarianceSpec::spatial_rbf(ds.design.locations.size())});
    }
    if (side.contains("sim_spec")) ds.sim = sim_spec_from_json(side.at("sim_spec"));
    if (side.contains("split")) {
        ds.split_mode = side.at("split").value("mode", std::string("random"));
        ds.test_rows = side.at("split").at("test_rows").get<std::vector<std::size_t>>();
        std::vector<bool> is_test(n, false);
        for (auto r : ds.test_rows) {
            if (r >= n) throw std::runtime_error(side_path + ": split row out of range");
            is_test[r] = true;
        }
        for (std::size_t i = 0; i < n; ++i)
            if (!is_test[i]) ds.train_rows.push_back(i);
    } else {
        random_split(n, 0, ds.train_rows, ds.test_rows);
    }
    return ds;
}

}  // namespace lmmnn
