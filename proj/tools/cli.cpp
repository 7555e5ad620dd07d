#include "cli.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>

namespace rbocpd::cli {

namespace {

constexpr double inf = std::numeric_limits<double>::infinity();

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string &line) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (true) {
        const auto comma = line.find(',', pos);
        out.push_back(trim(std::string_view(line).substr(pos, comma == std::string::npos ? std::string::npos : comma - pos)));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

bool parse_double(const std::string &s, double &v) {
    if (s.empty()) return false;
    const char *b = s.data();
    if (*b == '+') ++b;
    const auto res = std::from_chars(b, s.data() + s.size(), v);
    return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

// shortest text that reads back to the same double
std::string num(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double get_num(const json &j) {
    if (j.is_null()) return inf;
    if (j.is_string()) {
        const std::string s = j.get<std::string>();
        if (s == "inf") return inf;
        if (s == "-inf") return -inf;
        throw UsageError("expected a number, got '" + s + "'");
    }
    if (!j.is_number()) throw UsageError("expected a number, got " + j.dump());
    return j.get<double>();
}

json put_num(double v) {
    if (std::isinf(v)) return v > 0 ? json("inf") : json("-inf");
    return v;
}

Vector vector_from(const json &j, Eigen::Index n) {
    if (j.is_number()) return Vector::Constant(n, j.get<double>());
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = get_num(j[i]);
    if (n > 0 && v.size() != n) throw UsageError("expected a vector of length " + std::to_string(n) + ", got " + j.dump());
    return v;
}

// scalar -> s * I, flat list -> diagonal, nested list -> full matrix
Matrix matrix_from(const json &j, Eigen::Index n) {
    if (j.is_number()) return j.get<double>() * Matrix::Identity(n, n);
    if (!j.is_array() || j.empty()) throw UsageError("expected a matrix, got " + j.dump());
    if (!j[0].is_array()) {
        Vector diag = vector_from(j, n);
        return diag.asDiagonal();
    }
    Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j[0].size()));
    for (std::size_t r = 0; r < j.size(); ++r) {
        if (j[r].size() != j[0].size()) throw UsageError("ragged matrix " + j.dump());
        for (std::size_t c = 0; c < j[r].size(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = get_num(j[r][c]);
    }
    if (m.rows() != n || m.cols() != n) throw UsageError("expected a " + std::to_string(n) + "x" + std::to_string(n) + " matrix");
    return m;
}

json matrix_to(const Matrix &m) {
    json out = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        out.push_back(row);
    }
    return out;
}

json vector_to(const Vector &v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

json noise_to(const NoiseSpec &n) {
    return {{"kind", n.kind == NoiseKind::gaussian ? "gaussian" : "student_t"}, {"dof", n.dof}, {"scale", n.scale}};
}

NoiseSpec noise_from(const json &j) {
    NoiseSpec n;
    const std::string kind = j.value("kind", std::string("gaussian"));
    if (kind == "gaussian") n.kind = NoiseKind::gaussian;
    else if (kind == "student_t") n.kind = NoiseKind::student_t;
    else throw UsageError("unknown noise kind '" + kind + "'");
    n.dof = j.value("dof", n.dof);
    n.scale = j.value("scale", n.scale);
    return n;
}

template <class T> void take(const json &j, const char *key, T &field) {
    if (j.contains(key)) field = j.at(key).get<T>();
}

void take_num(const json &j, const char *key, double &field) {
    if (j.contains(key)) field = get_num(j.at(key));
}

json model_to(const ModelSpec &m) {
    return {{"id", m.id},
            {"lag", m.lag},
            {"intercept", m.include_intercept},
            {"design", m.design == DesignKind::pooled ? "pooled" : "per_stream"},
            {"beta_p", m.beta_p},
            {"prior",
             {{"a", m.prior.a}, {"b", m.prior.b}, {"mu", vector_to(m.prior.mu)}, {"sigma", matrix_to(m.prior.covariance())}}}};
}

ModelSpec model_from(const json &j, Eigen::Index d) {
    ModelSpec m;
    take(j, "id", m.id);
    take(j, "lag", m.lag);
    take(j, "intercept", m.include_intercept);
    const std::string design = j.value("design", std::string("per_stream"));
    if (design == "pooled") m.design = DesignKind::pooled;
    else if (design == "per_stream") m.design = DesignKind::per_stream;
    else throw UsageError("unknown design '" + design + "'");
    take(j, "beta_p", m.beta_p);
    if (m.lag < 0) throw UsageError("negative lag");
    const Eigen::Index p = m.p(d);
    const json prior = j.value("prior", json::object());
    const double a = prior.value("a", 1.0);
    const double b = prior.value("b", 1.0);
    const Vector mu = prior.contains("mu") ? vector_from(prior["mu"], p) : Vector::Zero(p);
    const Matrix sigma = prior.contains("sigma") ? matrix_from(prior["sigma"], p) : Matrix::Identity(p, p);
    m.prior = NigParams::from_covariance(a, b, mu, sigma);
    return m;
}

json simulation_to(const SimulationSpec &s) {
    json segs = json::array();
    for (const auto &seg : s.segments) {
        json ar = json::array();
        for (const auto &a : seg.ar) ar.push_back(matrix_to(a));
        segs.push_back({{"start", seg.start}, {"intercept", vector_to(seg.intercept)}, {"ar", ar}});
    }
    json noise = json::array();
    for (const auto &n : s.noise) noise.push_back(noise_to(n));
    return {{"T", s.T},
            {"d", s.d},
            {"seed", s.seed},
            {"burn_in", s.burn_in},
            {"segments", segs},
            {"noise", noise},
            {"contamination", s.contamination},
            {"contamination_noise", noise_to(s.contamination_noise)},
            {"contaminated_stream", s.contaminated_stream},
            {"range", {put_num(s.range_low), put_num(s.range_high)}}};
}

} // namespace

SimulationSpec simulation_from_json(const json &j) {
    SimulationSpec s;
    take(j, "T", s.T);
    take(j, "d", s.d);
    take(j, "seed", s.seed);
    take(j, "burn_in", s.burn_in);
    take(j, "contamination", s.contamination);
    take(j, "contaminated_stream", s.contaminated_stream);
    if (j.contains("contamination_noise")) s.contamination_noise = noise_from(j["contamination_noise"]);
    if (j.contains("range")) {
        s.range_low = get_num(j["range"].at(0));
        s.range_high = get_num(j["range"].at(1));
    }
    s.noise.clear();
    if (j.contains("noise")) {
        if (j["noise"].is_array()) {
            for (const auto &n : j["noise"]) s.noise.push_back(noise_from(n));
        } else {
            s.noise.push_back(noise_from(j["noise"]));
        }
    }
    if (s.noise.empty()) s.noise.push_back({});
    for (const auto &seg : j.value("segments", json::array())) {
        SegmentSpec out;
        take(seg, "start", out.start);
        out.intercept = seg.contains("intercept") ? vector_from(seg["intercept"], s.d) : Vector::Zero(s.d);
        for (const auto &a : seg.value("ar", json::array())) out.ar.push_back(matrix_from(a, s.d));
        s.segments.push_back(out);
    }
    s.validate();
    return s;
}

json preset_to_json(const Preset &p) {
    const DetectorConfig &c = p.detector;
    json models = json::array();
    for (const auto &m : c.models) models.push_back(model_to(m));
    return {{"preset", p.name},
            {"d", p.simulation.d},
            {"simulation", simulation_to(p.simulation)},
            {"models", models},
            {"hazard", {{"lambda", c.hazard.lambda}}},
            {"prune_k", c.prune_k},
            {"svrg",
             {{"W", c.svrg.W},
              {"B", c.svrg.B_star},
              {"b", c.svrg.b_star},
              {"m", c.svrg.m},
              {"K", c.svrg.K},
              {"eta", c.svrg.eta},
              {"variance_reduction", c.svrg.variance_reduction}}},
            {"beta",
             {{"init", "fixed"},
              {"beta_rlm", p.beta.beta_rlm},
              {"beta_p", p.beta.beta_p},
              {"eps_min", p.beta.eps_min},
              {"clip_rlm", p.beta.clip_rlm},
              {"clip_p", p.beta.clip_p},
              {"buffer_len", p.beta.buffer_len},
              {"tune", p.tune}}},
            {"loss", {{"tau_l", put_num(p.loss.tau_l)}, {"fd_step", p.loss.fd_step}}},
            {"seed", c.seed},
            {"parallel", c.parallel},
            {"condition_on_lags", c.condition_on_lags}};
}

RunConfig run_config_from_json(const json &j) {
    RunConfig cfg;
    take(j, "input", cfg.input);
    take(j, "columns", cfg.columns);
    take(j, "out_dir", cfg.out_dir);
    Eigen::Index d = j.value("d", static_cast<Eigen::Index>(0));
    if (cfg.input.empty()) {
        if (!j.contains("simulation")) throw UsageError("no input file and no simulation section");
        cfg.simulation = simulation_from_json(j["simulation"]);
        d = cfg.simulation->d;
    } else if (!cfg.columns.empty()) {
        d = static_cast<Eigen::Index>(cfg.columns.size());
    }
    if (d < 1) throw UsageError("set 'd' or 'columns' so the model designs can be built");

    DetectorConfig &c = cfg.detector;
    c.models.clear();
    for (const auto &m : j.value("models", json::array())) c.models.push_back(model_from(m, d));
    if (c.models.empty()) throw UsageError("no models configured");
    if (j.contains("hazard")) take_num(j["hazard"], "lambda", c.hazard.lambda);
    take(j, "prune_k", c.prune_k);
    if (j.contains("svrg")) {
        const json &s = j["svrg"];
        take(s, "W", c.svrg.W);
        take(s, "B", c.svrg.B_star);
        take(s, "b", c.svrg.b_star);
        take(s, "m", c.svrg.m);
        take(s, "K", c.svrg.K);
        take(s, "eta", c.svrg.eta);
        take(s, "variance_reduction", c.svrg.variance_reduction);
    }
    take(j, "seed", c.seed);
    take(j, "parallel", c.parallel);
    take(j, "condition_on_lags", c.condition_on_lags);

    cfg.beta.beta_p = c.models.front().beta_p;
    if (j.contains("beta")) {
        const json &b = j["beta"];
        take(b, "init", cfg.beta_init);
        take(b, "beta_rlm", cfg.beta.beta_rlm);
        take(b, "beta_p", cfg.beta.beta_p);
        take(b, "eps_min", cfg.beta.eps_min);
        take(b, "clip_rlm", cfg.beta.clip_rlm);
        take(b, "clip_p", cfg.beta.clip_p);
        take(b, "buffer_len", cfg.beta.buffer_len);
        take(b, "tune", cfg.tune);
    }
    if (cfg.beta_init != "fixed" && cfg.beta_init != "auto") throw UsageError("beta.init must be 'fixed' or 'auto'");
    c.beta_rlm = cfg.beta.beta_rlm;
    if (j.contains("loss")) {
        take_num(j["loss"], "tau_l", cfg.loss.tau_l);
        take(j["loss"], "fd_step", cfg.loss.fd_step);
    }
    if (cfg.simulation) cfg.simulation->seed = c.seed;
    c.validate(d);
    cfg.beta.validate();
    cfg.loss.validate();
    return cfg;
}

json build_config_json(const std::string &preset, const std::string &config_path,
                       const std::vector<std::string> &overrides) {
    json j = json::object();
    if (!preset.empty()) j = preset_to_json(make_preset(preset));
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw UsageError("cannot open config '" + config_path + "'");
        json file;
        try {
            file = json::parse(in, nullptr, true, true);
        } catch (const json::parse_error &e) {
            throw UsageError("config '" + config_path + "': " + e.what());
        }
        j.merge_patch(file);
    }
    for (const auto &kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0) throw UsageError("override '" + kv + "' is not key.path=value");
        std::string path = "/" + kv.substr(0, eq);
        for (auto &ch : path) {
            if (ch == '.') ch = '/';
        }
        const std::string text = kv.substr(eq + 1);
        json value = json::parse(text, nullptr, false);
        if (value.is_discarded()) value = text;
        try {
            j[json::json_pointer(path)] = value;
        } catch (const json::exception &e) {
            throw UsageError("override '" + kv + "': " + e.what());
        }
    }
    return j;
}

CsvTable read_csv(std::istream &in, const std::vector<std::string> &columns) {
    CsvTable out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!trim(line).empty()) break;
    }
    if (trim(line).empty()) throw DataError("no header line");
    const auto header = split(line);
    std::vector<std::size_t> pick;
    if (columns.empty()) {
        for (std::size_t i = 0; i < header.size(); ++i) pick.push_back(i);
    } else {
        for (const auto &name : columns) {
            const auto it = std::find(header.begin(), header.end(), name);
            if (it == header.end()) throw UsageError("column '" + name + "' not in the header");
            pick.push_back(static_cast<std::size_t>(it - header.begin()));
        }
    }
    for (std::size_t i : pick) out.header.push_back(header[i]);

    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto cells = split(line);
        if (cells.size() != header.size()) {
            std::ostringstream msg;
            msg << "line " << lineno << ": expected " << header.size() << " cells, got " << cells.size();
            throw DataError(msg.str());
        }
        Vector y(static_cast<Eigen::Index>(pick.size()));
        for (std::size_t k = 0; k < pick.size(); ++k) {
            const std::string &cell = cells[pick[k]];
            double v = 0.0;
            if (!parse_double(cell, v)) {
                throw DataError("line " + std::to_string(lineno) + ", column '" + header[pick[k]] + "': cannot parse '" +
                                cell + "'");
            }
            if (!std::isfinite(v)) {
                throw DataError("line " + std::to_string(lineno) + ", column '" + header[pick[k]] + "': non-finite value");
            }
            y(static_cast<Eigen::Index>(k)) = v;
        }
        out.rows.push_back(std::move(y));
    }
    if (out.rows.empty()) throw DataError("no observations");
    return out;
}

CsvTable read_csv_file(const std::string &path, const std::vector<std::string> &columns) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open input '" + path + "'");
    return read_csv(in, columns);
}

namespace {

void write_stream_csv(const std::string &path, const std::vector<Vector> &ys) {
    std::ofstream out(path);
    if (!out) throw UsageError("cannot write '" + path + "'");
    const Eigen::Index d = ys.empty() ? 0 : ys.front().size();
    for (Eigen::Index j = 0; j < d; ++j) out << (j ? "," : "") << "y" << j + 1;
    out << '\n';
    for (const auto &y : ys) {
        for (Eigen::Index j = 0; j < d; ++j) out << (j ? "," : "") << num(y(j));
        out << '\n';
    }
}

// log p(r | y) marginal over models; keeps the `cap` most probable
std::vector<std::pair<long, double>> run_length_cells(const DetectorSnapshot &snap, std::size_t cap) {
    std::map<long, double> by_r;
    for (const auto &[key, prob] : snap.run_length_posterior) by_r[key.first] += prob;
    std::vector<std::pair<long, double>> cells;
    for (const auto &[r, prob] : by_r) cells.emplace_back(r, std::log(prob));
    std::stable_sort(cells.begin(), cells.end(), [](const auto &a, const auto &b) { return a.second > b.second; });
    if (cap > 0 && cells.size() > cap) cells.resize(cap);
    std::sort(cells.begin(), cells.end());
    return cells;
}

long argmax_r(const std::vector<std::pair<long, double>> &cells) {
    long best = 0;
    double best_v = -inf;
    for (const auto &[r, v] : cells) {
        if (v > best_v) {
            best_v = v;
            best = r;
        }
    }
    return best;
}

} // namespace

int cmd_run(const RunConfig &cfg_in, std::ostream &log) {
    RunConfig cfg = cfg_in;
    std::vector<Vector> ys;
    if (!cfg.input.empty()) {
        const CsvTable table = read_csv_file(cfg.input, cfg.columns);
        ys = table.rows;
    } else if (cfg.simulation) {
        ys = simulate(*cfg.simulation).y;
    } else {
        throw UsageError("nothing to run on");
    }
    const Eigen::Index d = ys.front().size();
    cfg.detector.validate(d);

    if (cfg.beta_init == "auto") {
        // the first model's prior sets the shared beta_p; the other models
        // keep their configured offsets
        const ModelSpec &m0 = cfg.detector.models.front();
        Matrix x = Matrix::Zero(d, m0.p(d));
        if (m0.include_intercept) x.col(0).setOnes();
        const auto res = init_beta_p(m0.prior, x, d, InfluenceProbe::around(default_target_md(d), 200),
                                     cfg.beta.eps_min);
        if (res.at_boundary) log << "warning: beta_p init hit the boundary, using " << res.beta_p << '\n';
        const double scale = res.beta_p / m0.beta_p;
        for (auto &m : cfg.detector.models) m.beta_p *= scale;
        cfg.beta.beta_p = res.beta_p;
    }

    std::filesystem::create_directories(cfg.out_dir);
    const auto path = [&](const char *name) { return (std::filesystem::path(cfg.out_dir) / name).string(); };
    std::ofstream rl(path("runlength.csv"));
    std::ofstream pred(path("predictions.csv"));
    std::ofstream post(path("posterior_models.csv"));
    if (!rl || !pred || !post) throw UsageError("cannot write into '" + cfg.out_dir + "'");

    rl << "t,argmax_r,cells\n";
    pred << "t";
    for (Eigen::Index j = 0; j < d; ++j) pred << ",yhat" << j + 1;
    for (Eigen::Index j = 0; j < d; ++j) pred << ",y" << j + 1;
    for (Eigen::Index j = 0; j < d; ++j) pred << ",err" << j + 1;
    pred << '\n';
    post << "t";
    for (const auto &m : cfg.detector.models) post << ",model_" << m.id;
    post << '\n';

    BetaTuner tuner(cfg.detector, d, cfg.beta, cfg.loss, cfg.tune);
    const std::size_t cap = cfg.detector.prune_k > 0 ? cfg.detector.prune_k + 1 : 0;
    double sse = 0.0;
    double sae = 0.0;
    std::size_t scored = 0;
    double seconds = 0.0;
    for (const auto &y : ys) {
        const auto t0 = std::chrono::steady_clock::now();
        const DetectorSnapshot snap = tuner.observe(y);
        seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (snap.warmup) continue;
        ++scored;
        sse += snap.prediction_error.squaredNorm() / static_cast<double>(d);
        sae += snap.prediction_error.cwiseAbs().sum() / static_cast<double>(d);

        const auto cells = run_length_cells(snap, cap);
        rl << snap.t << ',' << argmax_r(cells);
        for (const auto &[r, v] : cells) rl << ',' << r << ':' << num(v);
        rl << '\n';

        pred << snap.t;
        for (Eigen::Index j = 0; j < d; ++j) pred << ',' << num(snap.prediction(j));
        for (Eigen::Index j = 0; j < d; ++j) pred << ',' << num(y(j));
        for (Eigen::Index j = 0; j < d; ++j) pred << ',' << num(snap.prediction_error(j));
        pred << '\n';

        post << snap.t;
        for (const auto &m : cfg.detector.models) {
            const auto it = snap.model_posterior.find(m.id);
            post << ',' << num(it == snap.model_posterior.end() ? 0.0 : it->second);
        }
        post << '\n';
    }

    const auto cps = tuner.detector().map_segmentation();
    std::ofstream seg(path("segmentation.csv"));
    seg << "changepoint\n";
    for (std::size_t cp : cps) seg << cp << '\n';

    const double n = static_cast<double>(std::max<std::size_t>(scored, 1));
    std::ofstream summary(path("summary.txt"));
    summary << "observations " << ys.size() << '\n'
            << "scored " << scored << '\n'
            << "mse " << num(sse / n) << '\n'
            << "mae " << num(sae / n) << '\n'
            << "changepoints " << cps.size() << '\n'
            << "beta_rlm " << num(tuner.beta().beta_rlm) << '\n'
            << "beta_p " << num(tuner.beta().beta_p) << '\n';
    // wall time varies between runs, so it stays out of summary.txt
    std::ofstream timing(path("timing.txt"));
    timing << "mean_seconds_per_observation " << seconds / static_cast<double>(ys.size()) << '\n';
    for (const auto &line : tuner.log()) log << line << '\n';
    return ok;
}

namespace {

int run_simulate(const std::string &preset, const std::string &config_path, const std::vector<std::string> &sets,
                 std::optional<std::uint64_t> seed, const std::string &out_path, std::ostream &out) {
    json j = build_config_json(preset, config_path, sets);
    if (j.contains("simulation")) j = j["simulation"];
    if (seed) j["seed"] = *seed;
    const SimulationSpec spec = simulation_from_json(j);
    const SimulatedStream s = simulate(spec);
    write_stream_csv(out_path, s.y);
    std::ofstream cp(out_path + ".changepoints.csv");
    cp << "changepoint\n";
    for (std::size_t t : s.changepoints) cp << t << '\n';
    std::ofstream ol(out_path + ".outliers.csv");
    ol << "t\n";
    for (std::size_t t : s.outliers) ol << t << '\n';
    out << "wrote " << s.y.size() << " rows to " << out_path << '\n';
    return ok;
}

int run_check_bound(int p, double a0, double b0, const std::vector<double> &sigma0, double lambda, double beta_rlm,
                    double v_lo, double v_hi, int points, double det_scale, std::ostream &out, std::ostream &err) {
    if (sigma0.empty()) throw UsageError("--sigma0 needs at least one value");
    if (!(v_lo > 0.0 && v_hi > v_lo) || points < 2) throw UsageError("bad |V|_min sweep");
    Vector diag(static_cast<Eigen::Index>(sigma0.size()));
    for (std::size_t i = 0; i < sigma0.size(); ++i) diag(static_cast<Eigen::Index>(i)) = sigma0[i];
    const NigParams prior = NigParams::from_covariance(a0, b0, Vector::Zero(diag.size()), diag.asDiagonal());
    HazardSpec hz;
    hz.lambda = lambda;
    out << "v_min,bound_value,holds\n";
    for (int i = 0; i < points; ++i) {
        const double v = std::exp(std::log(v_lo) + (std::log(v_hi) - std::log(v_lo)) * i / (points - 1));
        try {
            const BoundCheck c = check_cp_bound(prior, p, beta_rlm, hz, v, det_scale);
            out << num(v) << ',' << num(c.bound_value) << ',' << (c.holds ? "true" : "false") << '\n';
        } catch (const DomainError &e) {
            out << num(v) << ",nan,error\n";
            err << "v_min " << v << ": " << e.what() << '\n';
        }
    }
    err << "threshold " << cp_bound_threshold(prior, p, beta_rlm, hz, det_scale) << '\n';
    return ok;
}

int run_tune_init(const std::string &preset, const std::string &config_path, const std::vector<std::string> &sets,
                  std::optional<double> x_star, int points, std::ostream &out, std::ostream &err) {
    const json j = build_config_json(preset, config_path, sets);
    Eigen::Index d = j.value("d", static_cast<Eigen::Index>(1));
    if (j.contains("simulation")) d = j["simulation"].value("d", d);
    if (!j.contains("models") || j["models"].empty()) throw UsageError("no model prior configured");
    const ModelSpec m = model_from(j["models"][0], d);
    Matrix x = Matrix::Zero(d, m.p(d));
    if (m.include_intercept) x.col(0).setOnes();
    const double target = x_star ? *x_star : default_target_md(d);
    const InfluenceProbe probe = InfluenceProbe::around(target, points);
    const InitResult res = init_beta_p(m.prior, x, d, probe);
    out << "# beta_p " << num(res.beta_p) << '\n';
    out << "md,influence\n";
    for (std::size_t i = 0; i < res.curve.size(); ++i) out << num(probe.grid[i]) << ',' << num(res.curve[i]) << '\n';
    if (res.at_boundary) {
        err << "warning: no beta_p puts the influence peak at " << target << "; returned the boundary value\n";
        return warning;
    }
    return ok;
}

} // namespace

int main(int argc, char **argv, std::ostream &out, std::ostream &err) {
    CLI::App app{"Robust Bayesian online changepoint detection"};
    app.require_subcommand(1);

    std::string preset;
    std::string config_path;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::string input;
    bool parallel = false;

    const auto common = [&](CLI::App *sub) {
        sub->add_option("--preset", preset, "start from a named preset")
            ->check(CLI::IsMember(preset_names()));
        sub->add_option("-c,--config", config_path, "JSON config, merged over the preset");
        sub->add_option("--set", sets, "override a config field, e.g. svrg.eta=0.01");
        sub->add_option("--seed", seed, "rng seed");
    };

    CLI::App *run = app.add_subcommand("run", "run the detector over a CSV or a preset's simulated stream");
    common(run);
    run->add_option("--out-dir", out_dir, "output directory");
    run->add_option("-i,--input", input, "headered CSV, one row per time step");
    run->add_flag("--parallel", parallel, "score hypotheses in parallel");

    CLI::App *sim = app.add_subcommand("simulate", "write a synthetic stream and its changepoints");
    common(sim);
    std::string sim_out = "stream.csv";
    sim->add_option("-o,--out", sim_out, "output CSV; sidecars get .changepoints.csv and .outliers.csv");

    CLI::App *bound = app.add_subcommand("check-bound", "tabulate the single-outlier robustness bound");
    int p = 5;
    double a0 = 3.0, b0 = 5.0, lambda = 100.0, beta_rlm = 0.15, v_lo = 1e-8, v_hi = 1e-3, det_scale = 1.0;
    int points = 41;
    std::vector<double> sigma0{100.0, 5.0};
    bound->add_option("--p", p, "observation dimension");
    bound->add_option("--a0", a0);
    bound->add_option("--b0", b0);
    bound->add_option("--sigma0", sigma0, "prior covariance diagonal");
    bound->add_option("--lambda", lambda, "expected run length 1/H");
    bound->add_option("--beta-rlm", beta_rlm);
    bound->add_option("--vmin-from", v_lo);
    bound->add_option("--vmin-to", v_hi);
    bound->add_option("--points", points);
    bound->add_option("--det-scale", det_scale, "|I + X Sigma0 X^T| of the prior predictive");

    CLI::App *tune = app.add_subcommand("tune-init", "pick beta_p from the influence curve of the first model's prior");
    common(tune);
    std::optional<double> x_star;
    int grid_points = 200;
    tune->add_option("--x-star", x_star, "target Mahalanobis distance of the influence peak");
    tune->add_option("--points", grid_points, "grid size");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? ok : usage;
    }

    try {
        if (*run) {
            json j = build_config_json(preset, config_path, sets);
            if (seed) j["seed"] = *seed;
            if (!out_dir.empty()) j["out_dir"] = out_dir;
            if (!input.empty()) j["input"] = input;
            if (parallel) j["parallel"] = true;
            return cmd_run(run_config_from_json(j), err);
        }
        if (*sim) return run_simulate(preset, config_path, sets, seed, sim_out, out);
        if (*bound) return run_check_bound(p, a0, b0, sigma0, lambda, beta_rlm, v_lo, v_hi, points, det_scale, out, err);
        if (*tune) return run_tune_init(preset, config_path, sets, x_star, grid_points, out, err);
    } catch (const UsageError &e) {
        err << "error: " << e.what() << '\n';
        return usage;
    } catch (const DataError &e) {
        err << "data error: " << e.what() << '\n';
        return data;
    } catch (const DomainError &e) {
        err << "domain error: " << e.what() << '\n';
        return domain;
    } catch (const json::exception &e) {
        err << "config error: " << e.what() << '\n';
        return usage;
    }
    return usage;
}

} // namespace rbocpd::cli
