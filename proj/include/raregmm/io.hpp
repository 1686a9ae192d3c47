#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "evalkit.hpp"
#include "simlab.hpp"

namespace rgmm::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Write through a sibling temp file and rename, so readers never see a partial file.
inline void write_atomic(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot write " + tmp.string());
        out << content;
        if (!out.flush()) throw ConfigError("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline std::string fmt(double v, const char* spec = "%.10g") {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<int> line_numbers;
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream ss(line);
    while (std::getline(ss, cur, ',')) {
        const auto b = cur.find_first_not_of(" \t\r");
        const auto e = cur.find_last_not_of(" \t\r");
        out.push_back(b == std::string::npos ? "" : cur.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

/// Header line is required; blank lines and lines starting with '#' are ignored.
inline CsvTable parse_csv(const std::string& text, const std::string& name) {
    CsvTable t;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos || line[0] == '#') continue;
        auto fields = split_csv_line(line);
        if (t.header.empty()) {
            t.header = std::move(fields);
            continue;
        }
        if (fields.size() != t.header.size()) {
            throw ParseError(name + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                             " fields, found " + std::to_string(fields.size()));
        }
        t.rows.push_back(std::move(fields));
        t.line_numbers.push_back(lineno);
    }
    if (t.header.empty()) throw ParseError(name + ": empty file");
    return t;
}

inline double parse_double(const std::string& s, const std::string& name, int lineno) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos == 0 || pos != s.size() || !std::isfinite(v)) {
        throw ParseError(name + ":" + std::to_string(lineno) + ": invalid number '" + s + "'");
    }
    return v;
}

inline int parse_label(const std::string& s, const std::string& name, int lineno) {
    if (s == "0") return 0;
    if (s == "1") return 1;
    throw ParseError(name + ":" + std::to_string(lineno) + ": label must be 0 or 1, got '" + s + "'");
}

// Feature columns are every header entry named x<k>, in file order.
inline std::vector<int> feature_columns(const CsvTable& t, const std::string& name) {
    std::vector<int> cols;
    for (int j = 0; j < static_cast<int>(t.header.size()); ++j)
        if (t.header[j].size() > 1 && t.header[j][0] == 'x') cols.push_back(j);
    if (cols.empty()) throw SchemaError(name + ": no feature columns x1..xp in header");
    return cols;
}

inline int column_index(const CsvTable& t, const std::string& col, const std::string& name) {
    for (int j = 0; j < static_cast<int>(t.header.size()); ++j)
        if (t.header[j] == col) return j;
    throw SchemaError(name + ": missing column '" + col + "'");
}

inline Matrix feature_matrix(const CsvTable& t, const std::vector<int>& cols, const std::string& name) {
    Matrix x(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < t.rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j)
            x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                parse_double(t.rows[i][cols[j]], name, t.line_numbers[i]);
    return x;
}

/// Unlabeled CSV with columns x1..xp. A header-only file gives N = 0.
inline Matrix read_unlabeled_csv(const fs::path& path) {
    const std::string name = path.string();
    const CsvTable t = parse_csv(read_file(path), name);
    const auto cols = feature_columns(t, name);
    if (cols.size() != t.header.size()) throw SchemaError(name + ": unlabeled data must only have x columns");
    return feature_matrix(t, cols, name);
}

/// Labeled CSV with columns x1..xp, y.
inline LabeledDataSet read_labeled_csv(const fs::path& path) {
    const std::string name = path.string();
    const CsvTable t = parse_csv(read_file(path), name);
    const auto cols = feature_columns(t, name);
    const int yc = column_index(t, "y", name);
    Vector y(static_cast<Eigen::Index>(t.rows.size()));
    for (std::size_t i = 0; i < t.rows.size(); ++i)
        y(static_cast<Eigen::Index>(i)) = parse_label(t.rows[i][yc], name, t.line_numbers[i]);
    return LabeledDataSet(feature_matrix(t, cols, name), y);
}

struct GroupedData {
    std::vector<std::string> group_ids;  // first-appearance order
    std::vector<Matrix> x;
    std::vector<std::vector<int>> labels;
    int dim = 0;
};

/// Grouped CSV with columns group_id, x1..xp, label.
inline GroupedData read_grouped_csv(const fs::path& path) {
    const std::string name = path.string();
    const CsvTable t = parse_csv(read_file(path), name);
    const auto cols = feature_columns(t, name);
    const int gc = column_index(t, "group_id", name);
    const int lc = column_index(t, "label", name);
    const Matrix all = feature_matrix(t, cols, name);
    GroupedData g;
    g.dim = static_cast<int>(cols.size());
    std::map<std::string, std::size_t> index;
    std::vector<std::vector<Eigen::Index>> rows;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const std::string& id = t.rows[i][gc];
        auto [it, inserted] = index.emplace(id, g.group_ids.size());
        if (inserted) {
            g.group_ids.push_back(id);
            g.labels.emplace_back();
            rows.emplace_back();
        }
        rows[it->second].push_back(static_cast<Eigen::Index>(i));
        g.labels[it->second].push_back(parse_label(t.rows[i][lc], name, t.line_numbers[i]));
    }
    for (const auto& r : rows) g.x.push_back(all(r, Eigen::all));
    return g;
}

inline std::string matrix_csv(const Matrix& a) {
    std::string s;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < a.cols(); ++j) {
            if (j) s += ',';
            s += fmt(a(i, j), "%.17g");
        }
        s += '\n';
    }
    return s;
}

// ---------------------------------------------------------------------------
// Theta JSON
// ---------------------------------------------------------------------------

inline json matrix_json(const Matrix& a) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        json r = json::array();
        for (Eigen::Index j = 0; j < a.cols(); ++j) r.push_back(a(i, j));
        rows.push_back(r);
    }
    return rows;
}

inline json vector_json(const Vector& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

inline json theta_to_json(const Theta& t) {
    return json{{"p", t.dim()},
                {"packed", vector_json(t.pack())},
                {"alpha", t.alpha()},
                {"mu0", vector_json(t.mu(0))},
                {"sigma0", matrix_json(t.sigma(0))},
                {"mu1", vector_json(t.mu(1))},
                {"sigma1", matrix_json(t.sigma(1))}};
}

inline Vector json_vector(const json& j, const char* what) {
    if (!j.is_array()) throw SchemaError(std::string("theta: '") + what + "' must be an array");
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw SchemaError(std::string("theta: '") + what + "' must hold numbers");
        v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    }
    return v;
}

inline Matrix json_matrix(const json& j, const char* what) {
    if (!j.is_array() || j.empty()) throw SchemaError(std::string("theta: '") + what + "' must be a matrix");
    const auto n = static_cast<Eigen::Index>(j.size());
    Matrix a(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vector r = json_vector(j[static_cast<std::size_t>(i)], what);
        if (r.size() != n) throw SchemaError(std::string("theta: '") + what + "' must be square");
        a.row(i) = r.transpose();
    }
    return a;
}

/// The packed vector is authoritative; named blocks, when present, must agree with it.
inline Theta theta_from_json(const json& j) {
    if (!j.is_object() || !j.contains("p") || !j["p"].is_number_integer()) throw SchemaError("theta: missing 'p'");
    const int p = j["p"].get<int>();
    Theta t = [&] {
        if (j.contains("packed")) return Theta::unpack(json_vector(j["packed"], "packed"), p);
        for (const char* k : {"alpha", "mu0", "sigma0", "mu1", "sigma1"})
            if (!j.contains(k)) throw SchemaError(std::string("theta: missing '") + k + "'");
        return Theta(j["alpha"].get<double>(), json_vector(j["mu0"], "mu0"), json_matrix(j["sigma0"], "sigma0"),
                     json_vector(j["mu1"], "mu1"), json_matrix(j["sigma1"], "sigma1"));
    }();
    if (t.dim() != p) throw SchemaError("theta: block dimensions do not match p");
    if (j.contains("packed") && j.contains("mu0")) {
        const Theta named(j["alpha"].get<double>(), json_vector(j["mu0"], "mu0"), json_matrix(j["sigma0"], "sigma0"),
                          json_vector(j["mu1"], "mu1"), json_matrix(j["sigma1"], "sigma1"));
        if (named.dim() != p || max_abs_diff(named.pack(), t.pack()) > 1e-12 * (1.0 + t.pack().cwiseAbs().maxCoeff())) {
            throw SchemaError("theta: named blocks disagree with packed vector");
        }
    }
    return t;
}

inline Theta read_theta(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    try {
        return theta_from_json(j);
    } catch (const json::exception& e) {
        throw SchemaError(path.string() + ": " + e.what());
    } catch (const DomainError& e) {
        throw SchemaError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Simulation design config (JSON)
// ---------------------------------------------------------------------------

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [k, v] : j.items())
        if (!allowed.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
}

inline const char* to_string(AlphaStart a) {
    switch (a) {
        case AlphaStart::labeled_fraction: return "labeled_fraction";
        case AlphaStart::perturbed_truth: return "perturbed_truth";
        default: return "labeled_fraction_or_perturbed";
    }
}

inline json design_to_json(const SimDesign& d) {
    return json{{"n_total", d.n_total},
                {"alphas", d.alphas},
                {"label_fracs", d.label_fracs},
                {"reps", d.reps},
                {"seed", d.seed},
                {"theta_true", theta_to_json(d.theta_true)},
                {"fit", {{"max_iter", d.fit.max_iter}, {"tol", d.fit.tol}, {"ridge", d.fit.ridge}}},
                {"init",
                 {{"kind", "true_perturbed"},
                  {"mean_scale", d.init.mean_scale},
                  {"cov_scale", d.init.cov_scale},
                  {"alpha_start", to_string(d.init.alpha_start)},
                  {"alpha_fixed", d.init.alpha_fixed},
                  {"alpha_log_scale", d.init.alpha_log_scale}}},
                {"rho_at_estimate", d.rho_at_estimate},
                {"keep_details", d.keep_details}};
}

/// Keys not given keep the values of `base`.
inline SimDesign design_from_json(const json& j, SimDesign base = SimDesign::paper()) {
    check_keys(j,
               {"n_total", "alphas", "label_fracs", "reps", "seed", "theta_true", "fit", "init", "rho_at_estimate",
                "keep_details"},
               "design");
    SimDesign d = std::move(base);
    try {
        if (j.contains("n_total")) d.n_total = j["n_total"].get<int>();
        if (j.contains("alphas")) d.alphas = j["alphas"].get<std::vector<double>>();
        if (j.contains("label_fracs")) d.label_fracs = j["label_fracs"].get<std::vector<double>>();
        if (j.contains("reps")) d.reps = j["reps"].get<int>();
        if (j.contains("seed")) d.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("theta_true")) d.theta_true = theta_from_json(j["theta_true"]);
        if (j.contains("fit")) {
            const json& f = j["fit"];
            check_keys(f, {"max_iter", "tol", "ridge"}, "design.fit");
            if (f.contains("max_iter")) d.fit.max_iter = f["max_iter"].get<int>();
            if (f.contains("tol")) d.fit.tol = f["tol"].get<double>();
            if (f.contains("ridge")) d.fit.ridge = f["ridge"].get<double>();
        }
        if (j.contains("init")) {
            const json& i = j["init"];
            check_keys(i, {"kind", "mean_scale", "cov_scale", "alpha_start", "alpha_fixed", "alpha_log_scale"},
                       "design.init");
            if (i.contains("kind") && i["kind"].get<std::string>() != "true_perturbed") {
                throw ConfigError("design.init: simulations support kind 'true_perturbed' only");
            }
            if (i.contains("mean_scale")) d.init.mean_scale = i["mean_scale"].get<double>();
            if (i.contains("cov_scale")) d.init.cov_scale = i["cov_scale"].get<double>();
            if (i.contains("alpha_fixed")) d.init.alpha_fixed = i["alpha_fixed"].get<double>();
            if (i.contains("alpha_log_scale")) d.init.alpha_log_scale = i["alpha_log_scale"].get<double>();
            if (i.contains("alpha_start")) {
                const auto s = i["alpha_start"].get<std::string>();
                if (s == "perturbed_truth") d.init.alpha_start = AlphaStart::perturbed_truth;
                else if (s == "labeled_fraction") d.init.alpha_start = AlphaStart::labeled_fraction;
                else if (s == "labeled_fraction_or_perturbed")
                    d.init.alpha_start = AlphaStart::labeled_fraction_or_perturbed;
                else throw ConfigError("design.init: unknown alpha_start '" + s + "'");
            }
        }
        if (j.contains("rho_at_estimate")) d.rho_at_estimate = j["rho_at_estimate"].get<bool>();
        if (j.contains("keep_details")) d.keep_details = j["keep_details"].get<bool>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("design: ") + e.what());
    } catch (const SchemaError& e) {
        throw ConfigError(std::string("design.theta_true: ") + e.what());
    } catch (const DomainError& e) {
        throw ConfigError(std::string("design.theta_true: ") + e.what());
    }
    d.validate();
    return d;
}

inline SimDesign read_design(const fs::path& path) {
    json j;
    try {
        j = json::parse(read_file(path), nullptr, true, /*ignore_comments=*/true);
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    } catch (const ParseError& e) {
        throw ConfigError(e.what());
    }
    return design_from_json(j);
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline std::string cells_csv(const ExperimentReport& r) {
    std::string s = "alpha,label_frac,rmse,mean_rho,mean_n_iter,n_failed\n";
    for (const auto& c : r.cells) {
        s += fmt(c.alpha) + ',' + fmt(c.label_frac) + ',' + fmt(c.rmse, "%.6f") + ',' + fmt(c.mean_rho, "%.6f") +
             ',' + fmt(c.mean_n_iter, "%.2f") + ',' + std::to_string(c.n_failed) + '\n';
    }
    return s;
}

inline json report_to_json(const ExperimentReport& r) {
    json cells = json::array();
    for (const auto& c : r.cells) {
        json jc{{"alpha", c.alpha},
                {"label_frac", c.label_frac},
                {"n_labeled", c.n_labeled},
                {"n_unlabeled", c.n_unlabeled},
                {"rmse", c.rmse},
                {"mean_rho", c.mean_rho},
                {"mean_n_iter", c.mean_n_iter},
                {"n_ok", c.n_ok},
                {"n_failed", c.n_failed},
                {"n_unconverged", c.n_unconverged},
                {"cell_failed", c.cell_failed}};
        if (!c.reps.empty()) {
            json reps = json::array();
            for (const auto& d : c.reps) {
                json jr{{"rep", d.rep},
                        {"failed", d.failed},
                        {"termination", to_string(d.termination)},
                        {"n_iter", d.n_iter}};
                if (d.failed) {
                    jr["message"] = d.message;
                } else {
                    jr["rho"] = d.rho;
                    jr["theta_hat"] = vector_json(d.theta_hat);
                }
                reps.push_back(jr);
            }
            jc["replications"] = reps;
        }
        cells.push_back(jc);
    }
    return json{{"design", design_to_json(r.design)},
                {"stopping_rule", r.design.stopping_rule()},
                {"rho_evaluated_at", r.design.rho_at_estimate ? "theta_hat" : "theta_true"},
                {"runtime_seconds", r.runtime_seconds},
                {"threads", r.threads},
                {"cells", cells}};
}

}  // namespace rgmm::io
