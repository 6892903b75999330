#include "slamkit/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <fmt/format.h>
#include <json.hpp>

#include "slamkit/analysis.hpp"
#include "slamkit/ensemble.hpp"
#include "slamkit/error.hpp"
#include "slamkit/features.hpp"
#include "slamkit/gbdt.hpp"
#include "slamkit/metrics.hpp"
#include "slamkit/predictions.hpp"
#include "slamkit/seqnet.hpp"
#include "slamkit/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace slamkit::pipeline {

namespace {

constexpr double kDevFraction = 0.1;
constexpr double kTestFraction = 0.1;

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir))
        throw std::runtime_error("cannot create output directory " + dir.string());
}

class Writer {
public:
    explicit Writer(Outputs& o) : out_(o) {}

    template <class F>
    void file(const fs::path& p, F&& body) {
        std::ofstream f(p, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write " + p.string());
        body(f);
        f.flush();
        if (!f) throw std::runtime_error("error writing " + p.string());
        out_.files.push_back(p);
    }

    void text(const fs::path& p, const std::string& s) {
        file(p, [&](std::ostream& o) { o << s; });
    }

private:
    Outputs& out_;
};

std::ifstream open_in(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + p.string());
    return f;
}

PredictionSet read_pred_file(const fs::path& p) {
    auto f = open_in(p);
    return read_predictions(f);
}

ordered_json metrics_obj(const PredictionSet& preds, const Dataset& d) {
    return ordered_json::parse(to_json(evaluate(align_labels(preds, d))));
}

DataFiles generated_files(const fs::path& dir, const std::string& tag) {
    const auto base = (dir / (tag + ".slam")).string();
    auto p = [&](const char* ext) { return fs::path(base + ext); };
    return DataFiles{p(".train"), p(".dev"), p(".dev.key"), p(".test"), p(".test.key")};
}

bool fully_labeled(const std::vector<FeatureRow>& rows) {
    if (rows.empty()) return false;
    for (const auto& r : rows)
        if (r.label == Label::unknown) return false;
    return true;
}

std::vector<std::string> ids_of(const std::vector<FeatureRow>& rows) {
    std::vector<std::string> ids;
    ids.reserve(rows.size());
    for (const auto& r : rows) ids.push_back(r.instance_id);
    return ids;
}

}  // namespace

DataFiles data_files(const RunConfig& c) {
    if (c.data.given()) return DataFiles{c.data.train, c.data.dev, c.data.dev_key, c.data.test, c.data.test_key};
    return generated_files(c.out_dir, c.tag);
}

Dataset load_data(const RunConfig& c) {
    const auto files = data_files(c);
    std::vector<Dataset> parts;
    auto parse = [&](const fs::path& path, const fs::path& key, Partition part) {
        std::optional<LabelMap> labels;
        if (!key.empty() && fs::exists(key)) {
            auto k = open_in(key);
            labels = parse_labels(k);
        }
        auto in = open_in(path);
        ParseOptions opts;
        opts.partition = part;
        opts.require_labels = part == Partition::train;
        opts.language_pair = c.tag;
        parts.push_back(parse_dataset(in, labels ? &*labels : nullptr, opts));
        return labels.has_value();
    };
    parse(files.train, {}, Partition::train);
    const bool dev_labeled = parse(files.dev, files.dev_key, Partition::dev);
    bool test_labeled = false;
    if (!files.test.empty() && fs::exists(files.test)) test_labeled = parse(files.test, files.test_key, Partition::test);
    Dataset d = merge_datasets(std::move(parts));
    ValidateOptions vo;
    vo.labels_dev = dev_labeled;
    vo.labels_test = test_labeled;
    validate(d, vo);
    return d;
}

Outputs synth(const RunConfig& c) {
    c.synth.validate();
    ensure_dir(c.out_dir);
    auto gen = generate(c.synth);
    Dataset d = split_by_user_time(gen.dataset, kDevFraction, kTestFraction);
    d.language_pair = c.tag;
    const bool has_dev = std::any_of(d.users.begin(), d.users.end(), [](const UserTimeline& u) {
        return std::any_of(u.exercises.begin(), u.exercises.end(),
                           [](const Exercise& e) { return e.partition == Partition::dev; });
    });
    if (!has_dev)
        throw ValidationError("synth: dev partition is empty; raise synth.exercises_per_user");
    const auto files = generated_files(c.out_dir, c.tag);
    Outputs out;
    Writer w(out);
    w.file(files.train, [&](std::ostream& o) { write_dataset(d, o, {true, Partition::train}); });
    w.file(files.dev, [&](std::ostream& o) { write_dataset(d, o, {false, Partition::dev}); });
    w.file(files.dev_key, [&](std::ostream& o) { write_labels(d, o, Partition::dev); });
    w.file(files.test, [&](std::ostream& o) { write_dataset(d, o, {false, Partition::test}); });
    w.file(files.test_key, [&](std::ostream& o) { write_labels(d, o, Partition::test); });
    w.file(c.out_dir / "latent.json", [&](std::ostream& o) { write_latent(gen.latent, c.synth, o); });

    const auto oracle = oracle_predictions(d, gen.latent);
    PredictionSet dev, test;
    std::unordered_map<std::string, Partition> part;
    for (const auto& u : d.users)
        for (const auto& e : u.exercises)
            for (const auto& t : e.tokens) part.emplace(t.instance_id, e.partition);
    for (const auto& [id, p] : oracle.entries()) {
        const auto pt = part.at(id);
        if (pt == Partition::dev) dev.add(id, p);
        if (pt == Partition::test) test.add(id, p);
    }
    w.file(c.out_dir / "oracle_dev.pred", [&](std::ostream& o) { write_predictions(dev, o); });
    w.file(c.out_dir / "oracle_test.pred", [&](std::ostream& o) { write_predictions(test, o); });
    const auto m = evaluate(align_labels(dev, d));
    out.summary = fmt::format("synth: {} users, {} exercises, {} tokens; oracle dev AUC {}", d.users.size(),
                              d.num_exercises(), d.num_tokens(), m.auc ? fmt::format("{:.4f}", *m.auc) : "n/a");
    return out;
}

Outputs ingest(const RunConfig& c) {
    ensure_dir(c.out_dir);
    const Dataset d = load_data(c);
    const Vocab v = build_vocab(d);
    const auto rows = engineer(d, v);
    Outputs out;
    Writer w(out);
    w.file(c.out_dir / "features.csv", [&](std::ostream& o) { write_feature_csv(rows, v, o); });
    std::size_t counts[3] = {0, 0, 0};
    std::size_t labeled[3] = {0, 0, 0};
    for (const auto& r : rows) {
        ++counts[static_cast<int>(r.partition)];
        labeled[static_cast<int>(r.partition)] += r.label != Label::unknown;
    }
    ordered_json j;
    j["language_pair"] = d.language_pair;
    j["users"] = d.users.size();
    j["exercises"] = d.num_exercises();
    j["tokens"] = d.num_tokens();
    for (int p = 0; p < 3; ++p)
        j["partitions"][std::string(to_string(static_cast<Partition>(p)))] = {{"tokens", counts[p]},
                                                                             {"labeled", labeled[p]}};
    j["vocab"] = {{"token", v.size(Cat::token) - 1},
                  {"exercise_key", v.size(Cat::exercise_key) - 1},
                  {"user", v.size(Cat::user) - 1},
                  {"morph_keys", v.morph_keys()}};
    j["vocab_hash"] = fmt::format("{:016x}", v.hash());
    w.text(c.out_dir / "ingest.json", j.dump(2) + "\n");
    out.summary = fmt::format("ingest: {} users, {} tokens ({} train / {} dev / {} test)", d.users.size(),
                              d.num_tokens(), counts[0], counts[1], counts[2]);
    return out;
}

Outputs train_gbdt(const RunConfig& c) {
    ensure_dir(c.out_dir);
    const Dataset d = load_data(c);
    const Vocab v = build_vocab(d);
    const auto rows = engineer(d, v);
    const TabularOptions topt{c.gbdt.use_user, c.gbdt.use_morph};
    const auto tr = select_partition(rows, Partition::train);
    const auto dv = select_partition(rows, Partition::dev);
    const auto te = select_partition(rows, Partition::test);
    const auto xtr = to_tabular(tr, v, topt);
    const auto ytr = labels_of(tr);
    const auto xdv = to_tabular(dv, v, topt);
    const bool use_valid = fully_labeled(dv);
    const auto ydv = use_valid ? labels_of(dv) : std::vector<int>{};
    auto res = gbdt::train(xtr, ytr, use_valid ? &xdv : nullptr, ydv, c.gbdt.params);
    res.forest.vocab_hash = v.hash();

    gbdt::Forest test_model = res.forest;
    if (c.gbdt.final_refit && !dv.empty() && use_valid) {
        auto both = tr;
        both.insert(both.end(), dv.begin(), dv.end());
        auto p = c.gbdt.params;
        p.n_estimators = std::max(1, res.forest.best_iteration);
        test_model = gbdt::train(to_tabular(both, v, topt), labels_of(both), nullptr, {}, p).forest;
        test_model.vocab_hash = v.hash();
    }

    Outputs out;
    Writer w(out);
    w.file(c.out_dir / "gbdt_model.json", [&](std::ostream& o) { gbdt::save_forest(res.forest, o); });
    if (c.gbdt.final_refit)
        w.file(c.out_dir / "gbdt_model_refit.json", [&](std::ostream& o) { gbdt::save_forest(test_model, o); });
    const auto dev_preds = gbdt::predict(res.forest, xdv, ids_of(dv));
    w.file(c.out_dir / "gbdt_dev.pred", [&](std::ostream& o) { write_predictions(dev_preds, o); });
    if (!te.empty()) {
        const auto test_preds = gbdt::predict(test_model, to_tabular(te, v, topt), ids_of(te));
        w.file(c.out_dir / "gbdt_test.pred", [&](std::ostream& o) { write_predictions(test_preds, o); });
    }
    w.file(c.out_dir / "gbdt_train_log.csv", [&](std::ostream& o) {
        o << "iteration,train_log_loss,valid_auc\n";
        for (std::size_t i = 0; i < res.log.train_loss.size(); ++i)
            o << i + 1 << ',' << fmt::format("{:.17g}", res.log.train_loss[i]) << ','
              << (i < res.log.valid_auc.size() ? fmt::format("{:.17g}", res.log.valid_auc[i]) : "") << '\n';
    });
    w.file(c.out_dir / "gbdt_importance.txt",
           [&](std::ostream& o) { write_importance_text(importance_report(res.forest, c.analysis.top_k), o); });
    ordered_json j;
    j["model"] = "gbdt";
    j["trees"] = res.forest.trees.size();
    j["best_iteration"] = res.log.best_iteration;
    j["stopped_early"] = res.log.stopped_early;
    if (use_valid) j["dev"] = metrics_obj(dev_preds, d);
    w.text(c.out_dir / "gbdt_metrics.json", j.dump(2) + "\n");
    out.summary = fmt::format("train-gbdt: {} trees{}", res.forest.trees.size(),
                              use_valid && j["dev"]["auc"].is_number()
                                  ? fmt::format(", dev AUC {:.4f}", j["dev"]["auc"].get<double>())
                                  : std::string());
    return out;
}

Outputs train_rnn(const RunConfig& c) {
    ensure_dir(c.out_dir);
    const Dataset d = load_data(c);
    const Vocab v = build_vocab(d);
    const auto rows = engineer(d, v);
    auto res = seqnet::train_net(rows, v, c.rnn);

    Outputs out;
    Writer w(out);
    w.file(c.out_dir / "rnn_model.bin", [&](std::ostream& o) { seqnet::save_model(res.model, o); });
    const auto dev_preds = seqnet::predict_net(res.model, rows, Partition::dev);
    w.file(c.out_dir / "rnn_dev.pred", [&](std::ostream& o) { write_predictions(dev_preds, o); });
    const auto test_preds = seqnet::predict_net(res.model, rows, Partition::test);
    if (!test_preds.empty())
        w.file(c.out_dir / "rnn_test.pred", [&](std::ostream& o) { write_predictions(test_preds, o); });
    w.file(c.out_dir / "rnn_train_log.csv", [&](std::ostream& o) {
        o << "epoch,train_log_loss,dev_auc\n";
        for (const auto& e : res.log)
            o << e.epoch << ',' << fmt::format("{:.17g}", e.train_loss) << ','
              << (e.dev_auc ? fmt::format("{:.17g}", *e.dev_auc) : "") << '\n';
    });
    ordered_json j;
    j["model"] = "rnn";
    j["parameters"] = res.model.net.num_params();
    j["best_epoch"] = res.best_epoch;
    if (res.best_auc) j["best_dev_slice_auc"] = *res.best_auc;
    j["diverged"] = res.diverged;
    if (fully_labeled(select_partition(rows, Partition::dev))) j["dev"] = metrics_obj(dev_preds, d);
    w.text(c.out_dir / "rnn_metrics.json", j.dump(2) + "\n");
    if (res.diverged) throw std::runtime_error("train-rnn: " + res.message);
    out.summary = fmt::format("train-rnn: best epoch {}{}", res.best_epoch,
                              j.contains("dev") && j["dev"]["auc"].is_number()
                                  ? fmt::format(", dev AUC {:.4f}", j["dev"]["auc"].get<double>())
                                  : std::string());
    return out;
}

EnsembleInputs default_ensemble_inputs(const RunConfig& c) {
    return EnsembleInputs{c.out_dir / "gbdt_dev.pred", c.out_dir / "gbdt_test.pred", c.out_dir / "rnn_dev.pred",
                          c.out_dir / "rnn_test.pred"};
}

Outputs ensemble(const RunConfig& c, const EnsembleInputs& in) {
    ensure_dir(c.out_dir);
    const Dataset d = load_data(c);
    const auto a_dev = read_pred_file(in.a_dev);
    const auto b_dev = read_pred_file(in.b_dev);
    const auto labels = partition_labels(d, Partition::dev);
    const auto r = search_weight(a_dev, b_dev, labels, c.ensemble_step);
    Outputs out;
    Writer w(out);
    w.text(c.out_dir / "ensemble_grid.csv", weight_grid_csv(r));
    const auto dev_blend = blend(a_dev, b_dev, r.best_w);
    w.file(c.out_dir / "ensemble_dev.pred", [&](std::ostream& o) { write_predictions(dev_blend, o); });
    const bool have_test = fs::exists(in.a_test) && fs::exists(in.b_test);
    ordered_json j;
    j["weight_gbdt"] = r.best_w;
    j["dev_auc"] = r.best_auc;
    j["dev_auc_gbdt"] = r.grid.back().second;
    j["dev_auc_rnn"] = r.grid.front().second;
    if (have_test) {
        const auto test_blend = blend(read_pred_file(in.a_test), read_pred_file(in.b_test), r.best_w);
        w.file(c.out_dir / "ensemble_test.pred", [&](std::ostream& o) { write_predictions(test_blend, o); });
    }
    w.text(c.out_dir / "ensemble.json", j.dump(2) + "\n");
    out.summary = fmt::format("ensemble: w_gbdt = {:.2f}, dev AUC {:.4f} (gbdt {:.4f}, rnn {:.4f})", r.best_w,
                              r.best_auc, r.grid.back().second, r.grid.front().second);
    return out;
}

EvalInputs default_eval_inputs(const RunConfig& c) {
    EvalInputs in;
    in.predictions = c.out_dir / "ensemble_dev.pred";
    in.partition = Partition::dev;
    if (fs::exists(c.out_dir / "gbdt_model.json")) in.forest = c.out_dir / "gbdt_model.json";
    return in;
}

Outputs evaluate(const RunConfig& c, const EvalInputs& in) {
    ensure_dir(c.out_dir);
    const Dataset d = load_data(c);
    const auto preds = read_pred_file(in.predictions);
    auto j = metrics_obj(preds, d);
    ordered_json doc;
    doc["predictions"] = in.predictions.filename().string();
    doc["partition"] = std::string(to_string(in.partition));
    for (auto& [k, v] : j.items()) doc[k] = v;
    Outputs out;
    Writer w(out);
    const auto stem = in.predictions.stem().string();
    w.text(c.out_dir / (stem + ".metrics.json"), doc.dump(2) + "\n");
    out.summary = fmt::format("evaluate: {} on {}: auc {} f1 {:.4f} log_loss {:.4f}", stem, to_string(in.partition),
                              j["auc"].is_number() ? fmt::format("{:.4f}", j["auc"].get<double>()) : "null",
                              j["f1"].get<double>(), j["log_loss"].get<double>());
    return out;
}

Outputs analyze(const RunConfig& c, const EvalInputs& in) {
    ensure_dir(c.out_dir);
    const Dataset d = load_data(c);
    const Vocab v = build_vocab(d);
    const auto rows = engineer(d, v);
    const auto preds = read_pred_file(in.predictions);

    const auto tnorm = horizon_time_norm(rows, in.partition);
    std::vector<int> y;
    std::vector<double> s, t;
    std::vector<std::int32_t> tok;
    std::size_t k = 0;
    for (const auto& r : rows) {
        if (r.partition != in.partition) continue;
        const double tn = tnorm[k++];
        const auto p = preds.find(r.instance_id);
        if (!p) throw ValidationError("analyze: no prediction for instance " + r.instance_id);
        if (r.label == Label::unknown) throw ValidationError("analyze: instance " + r.instance_id + " has no label");
        y.push_back(r.label == Label::mistake);
        s.push_back(*p);
        t.push_back(tn);
        tok.push_back(r.cat[static_cast<std::size_t>(Cat::token)]);
    }
    if (y.size() != preds.size()) throw ValidationError("analyze: predictions cover instances outside the partition");

    const auto decay = decay_curve(y, s, t, c.decay_fractions());
    const auto rarity = c.analysis.rarity_cuts.empty()
                            ? rarity_curve(y, s, tok, v.token_frequency())
                            : rarity_curve(y, s, tok, v.token_frequency(), c.analysis.rarity_cuts);

    Outputs out;
    Writer w(out);
    const auto stem = in.predictions.stem().string();
    w.file(c.out_dir / (stem + ".decay.csv"), [&](std::ostream& o) { write_decay_csv(decay, o); });
    w.file(c.out_dir / (stem + ".rarity.csv"), [&](std::ostream& o) { write_rarity_csv(rarity, o); });

    ordered_json j;
    j["predictions"] = in.predictions.filename().string();
    j["partition"] = std::string(to_string(in.partition));
    if (!decay.points.empty()) {
        auto at = [&](double f) -> std::optional<DecayPoint> {
            std::optional<DecayPoint> best;
            for (const auto& p : decay.points)
                if (p.fraction <= f + 1e-12) best = p;
            return best;
        };
        const auto q = at(0.25);
        j["decay"] = {{"log_loss_at_0.25", q ? ordered_json(q->log_loss) : ordered_json(nullptr)},
                      {"log_loss_at_1", decay.points.back().log_loss},
                      {"skipped", decay.skipped}};
    }
    if (!rarity.points.empty()) {
        const auto rp = rarity_at_instance_share(rarity, c.analysis.rarity_share);
        j["rarity"] = {{"target_instance_share", c.analysis.rarity_share},
                       {"rarest_tokens", rp.x},
                       {"instance_share", rp.instance_share},
                       {"loss_share", rp.loss_share}};
    }
    if (in.forest && fs::exists(*in.forest)) {
        auto f = open_in(*in.forest);
        const auto forest = gbdt::load_forest(f);
        const auto imp = importance_report(forest, c.analysis.top_k);
        w.file(c.out_dir / "importance.txt", [&](std::ostream& o) { write_importance_text(imp, o); });
        w.text(c.out_dir / "importance.json", importance_json(imp) + "\n");
    }
    w.text(c.out_dir / (stem + ".analysis.json"), j.dump(2) + "\n");
    out.summary = fmt::format("analyze: {} decay points, {} rarity points", decay.points.size(), rarity.points.size());
    return out;
}

}  // namespace slamkit::pipeline
