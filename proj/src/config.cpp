#include "obsmhe/config.hpp"

#include "json.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace obsmhe {

namespace {

using nlohmann::json;

// Line of the first occurrence of the quoted keys of `path`, searched in
// sequence so that nested keys resolve inside their section.
int locate_line(const std::string& text, const std::vector<std::string>& path) {
    std::size_t pos = 0;
    for (const std::string& key : path) {
        const std::size_t hit = text.find('"' + key + '"', pos);
        if (hit == std::string::npos) break;
        pos = hit;
    }
    return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(pos), '\n'));
}

class Section {
  public:
    Section(const json& node, std::vector<std::string> path, const std::string& text, const std::string& origin)
        : node_(node), path_(std::move(path)), text_(text), origin_(origin) {
        if (!node_.is_object()) fail("expected an object");
    }

    [[noreturn]] void fail(const std::string& message, const std::string& key = "") const {
        auto path = path_;
        if (!key.empty()) path.push_back(key);
        std::string dotted;
        for (const auto& p : path) dotted += (dotted.empty() ? "" : ".") + p;
        throw ConfigError(origin_ + ":" + std::to_string(locate_line(text_, path)) + ": " +
                          (dotted.empty() ? "" : dotted + ": ") + message);
    }

    bool has(const std::string& key) const { return node_.contains(key); }

    const json& raw(const std::string& key) {
        if (!node_.contains(key)) fail("missing required key", key);
        seen_.insert(key);
        return node_.at(key);
    }

    Section section(const std::string& key) {
        auto path = path_;
        path.push_back(key);
        return Section(raw(key), path, text_, origin_);
    }

    double number(const std::string& key) {
        const json& v = raw(key);
        if (!v.is_number()) fail("expected a number", key);
        return v.get<double>();
    }

    std::int64_t integer(const std::string& key) {
        const json& v = raw(key);
        if (!v.is_number_integer()) fail("expected an integer", key);
        return v.get<std::int64_t>();
    }

    std::string string(const std::string& key) {
        const json& v = raw(key);
        if (!v.is_string()) fail("expected a string", key);
        return v.get<std::string>();
    }

    // null entries stand for infinite bounds when `allow_null` is set.
    Vector vector(const std::string& key, double null_value = 0.0, bool allow_null = false) {
        const json& v = raw(key);
        if (!v.is_array()) fail("expected an array of numbers", key);
        Vector out(static_cast<Eigen::Index>(v.size()));
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (v[i].is_null() && allow_null) {
                out[static_cast<Eigen::Index>(i)] = null_value;
            } else if (v[i].is_number()) {
                out[static_cast<Eigen::Index>(i)] = v[i].get<double>();
            } else {
                fail("expected an array of numbers", key);
            }
        }
        return out;
    }

    Matrix matrix(const std::string& key) {
        const json& v = raw(key);
        if (!v.is_array() || v.empty() || !v[0].is_array()) fail("expected a matrix (array of rows)", key);
        const auto rows = static_cast<Eigen::Index>(v.size());
        const auto cols = static_cast<Eigen::Index>(v[0].size());
        Matrix out(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i) {
            const json& row = v[static_cast<std::size_t>(i)];
            if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) fail("ragged matrix rows", key);
            for (Eigen::Index j = 0; j < cols; ++j) {
                const json& e = row[static_cast<std::size_t>(j)];
                if (!e.is_number()) fail("expected numeric matrix entries", key);
                out(i, j) = e.get<double>();
            }
        }
        return out;
    }

    Box box(const std::string& key) {
        Section s = section(key);
        Vector lo = s.vector("lower", -kInf, true);
        Vector hi = s.vector("upper", kInf, true);
        s.finish();
        try {
            return Box(std::move(lo), std::move(hi));
        } catch (const ConfigError& e) {
            fail(e.what(), key);
        }
    }

    /// Rejects keys that were never read.
    void finish() const {
        for (const auto& item : node_.items()) {
            if (!seen_.count(item.key())) fail("unknown key", item.key());
        }
    }

  private:
    const json& node_;
    std::vector<std::string> path_;
    const std::string& text_;
    const std::string& origin_;
    std::set<std::string> seen_;
};

void check_dim(Section& s, const std::string& key, Eigen::Index got, Eigen::Index want) {
    if (got != want) {
        s.fail("expected dimension " + std::to_string(want) + ", got " + std::to_string(got), key);
    }
}

}  // namespace

LyapunovCertificate ExperimentConfig::certificate() const { return LyapunovCertificate::quadratic(P, eta, Q, R); }

SystemModel ExperimentConfig::model() const { return make_reactor_model(reactor); }

AuxObserver ExperimentConfig::observer(const SystemModel& m) const {
    return make_luenberger_observer(m, Matrix(reactor.gain), reactor.observer_box, reactor.observer_sample_box,
                                    metric_projection ? P : Matrix());
}

MheConfig ExperimentConfig::mhe_config() const {
    MheConfig cfg;
    cfg.M = estimator.M;
    cfg.T = estimator.T;
    cfg.W = estimator.a * P;
    cfg.G = estimator.G;
    cfg.lipschitz_h = reactor.lipschitz_h;
    cfg.form = estimator.form;
    cfg.candidate_mode = estimator.candidate_mode;
    cfg.iterations = estimator.iterations;
    cfg.optimizer = estimator.optimizer;
    return cfg;
}

Scenario ExperimentConfig::build_scenario() const {
    SystemModel m = model();
    AuxObserver obs = observer(m);
    Scenario sc{m, obs, certificate(), mhe_config(), scenario.x0, scenario.xhat0, m.dist_box, m.noise_box};
    sc.t_sim = scenario.t_sim;
    sc.seed = scenario.seed;
    sc.replicates = scenario.replicates;
    return sc;
}

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
    json doc;
    try {
        doc = json::parse(text, nullptr, true, /*ignore_comments=*/false);
    } catch (const json::parse_error& e) {
        const auto byte = std::min<std::size_t>(e.byte, text.size());
        const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
        throw ConfigError(origin + ":" + std::to_string(line) + ": invalid JSON: " + e.what());
    }

    ExperimentConfig cfg;
    Section root(doc, {}, text, origin);

    {
        Section s = root.section("model");
        cfg.model_id = s.string("id");
        if (cfg.model_id != "reactor") s.fail("unsupported model id '" + cfg.model_id + "' (known: reactor)", "id");
        ReactorParams& r = cfg.reactor;
        r.k1 = s.number("k1");
        r.k2 = s.number("k2");
        r.t_delta = s.number("t_delta");
        r.state_box = s.box("state_box");
        check_dim(s, "state_box", r.state_box.dim(), 2);
        r.w_bound = s.vector("w_bound");
        check_dim(s, "w_bound", r.w_bound.size(), 2);
        const Vector v_bound = s.vector("v_bound");
        check_dim(s, "v_bound", v_bound.size(), 1);
        r.v_bound = v_bound[0];
        if ((r.w_bound.array() < 0.0).any() || r.v_bound < 0.0) s.fail("disturbance bounds must be nonnegative");
        r.lipschitz_h = s.number("lipschitz_h");
        if (!(r.lipschitz_h > 0.0)) s.fail("must be positive", "lipschitz_h");
        s.finish();
    }
    {
        Section s = root.section("observer");
        const std::string kind = s.string("type");
        if (kind != "luenberger") s.fail("unsupported observer type '" + kind + "' (known: luenberger)", "type");
        cfg.reactor.gain = s.vector("gain");
        check_dim(s, "gain", cfg.reactor.gain.size(), 2);
        cfg.reactor.observer_box = s.box("domain");
        check_dim(s, "domain", cfg.reactor.observer_box.dim(), 2);
        cfg.reactor.observer_sample_box = s.box("sample_box");
        check_dim(s, "sample_box", cfg.reactor.observer_sample_box.dim(), 2);
        if (!cfg.reactor.observer_sample_box.is_finite()) s.fail("sample box must be finite", "sample_box");
        const std::string projection = s.string("projection");
        if (projection == "certificate") {
            cfg.metric_projection = true;
        } else if (projection == "euclidean") {
            cfg.metric_projection = false;
        } else {
            s.fail("expected 'certificate' or 'euclidean'", "projection");
        }
        s.finish();
    }
    {
        Section s = root.section("certificate");
        cfg.P = s.matrix("P");
        check_dim(s, "P", cfg.P.rows(), 2);
        cfg.eta = s.number("eta");
        if (!(cfg.eta >= 0.0 && cfg.eta < 1.0)) s.fail("must lie in [0, 1)", "eta");
        cfg.Q = s.matrix("Q");
        check_dim(s, "Q", cfg.Q.rows(), 2);
        cfg.R = s.matrix("R");
        check_dim(s, "R", cfg.R.rows(), 1);
        try {
            cfg.certificate().validate();
        } catch (const Error& e) {
            s.fail(e.what());
        }
        cfg.reactor.projection_metric = cfg.P;
        s.finish();
    }
    {
        Section s = root.section("estimator");
        EstimatorSettings& e = cfg.estimator;
        const auto M = s.integer("M");
        if (M < 1 || M > 1000000) s.fail("must be at least 1", "M");
        e.M = static_cast<int>(M);
        const auto T = s.integer("T");
        if (T < 1 || T > 1000000) s.fail("must be at least 1", "T");
        e.T = static_cast<int>(T);
        e.a = s.number("a");
        if (!(e.a > 0.0)) s.fail("must be positive", "a");
        e.G = s.matrix("G");
        check_dim(s, "G", e.G.rows(), 1);
        try {
            e.form = parse_form(s.string("form"));
        } catch (const ConfigError& err) {
            s.fail(err.what(), "form");
        }
        try {
            e.candidate_mode = parse_candidate_mode(s.string("candidate_mode"));
        } catch (const ConfigError& err) {
            s.fail(err.what(), "candidate_mode");
        }
        if (e.candidate_mode == CandidateMode::Reinit && e.T < e.M) s.fail("reinit mode requires T >= M", "T");
        const json& it = s.raw("iterations");
        if (it.is_string() && it.get<std::string>() == "converged") {
            e.iterations = kConverged;
        } else if (it.is_number_integer() && it.get<std::int64_t>() >= 0 && it.get<std::int64_t>() <= 1000000) {
            e.iterations = static_cast<int>(it.get<std::int64_t>());
        } else {
            s.fail("expected a nonnegative integer or \"converged\"", "iterations");
        }
        Section o = s.section("optimizer");
        e.optimizer.max_inner = static_cast<int>(o.integer("max_inner"));
        if (e.optimizer.max_inner < 1) o.fail("must be at least 1", "max_inner");
        e.optimizer.grad_tol = o.number("grad_tol");
        e.optimizer.step_tol = o.number("step_tol");
        if (e.optimizer.grad_tol < 0.0 || e.optimizer.step_tol < 0.0) o.fail("tolerances must be nonnegative");
        o.finish();
        s.finish();
    }
    {
        Section s = root.section("scenario");
        ScenarioSettings& sc = cfg.scenario;
        sc.x0 = s.vector("x0");
        check_dim(s, "x0", sc.x0.size(), 2);
        sc.xhat0 = s.vector("xhat0");
        check_dim(s, "xhat0", sc.xhat0.size(), 2);
        if (!cfg.reactor.observer_box.contains(sc.xhat0)) s.fail("initial estimate must lie in the observer domain", "xhat0");
        const auto t_sim = s.integer("t_sim");
        if (t_sim < 0 || t_sim > 100000000) s.fail("must be nonnegative", "t_sim");
        sc.t_sim = static_cast<int>(t_sim);
        const json& seed = s.raw("seed");
        if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<std::int64_t>() >= 0)) {
            s.fail("expected a nonnegative integer", "seed");
        }
        sc.seed = seed.get<std::uint64_t>();
        const auto reps = s.integer("replicates");
        if (reps < 1 || reps > 1000000) s.fail("must be at least 1", "replicates");
        sc.replicates = static_cast<int>(reps);
        s.finish();
    }
    root.finish();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path + ": cannot open config file");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str(), path);
}

}  // namespace obsmhe
