#include "slamkit/config.hpp"

#include "slamkit/analysis.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>
#include <toml.hpp>

namespace slamkit {

namespace {

class Section {
public:
    Section(const toml::table* t, std::string name, const std::filesystem::path& base)
        : t_(t), name_(std::move(name)), base_(base) {}

    template <class T>
    void get(const char* key, T& out) {
        if (!t_) return;
        const toml::node* n = t_->get(key);
        if (!n) return;
        used_.insert(key);
        read(*n, key, out);
    }

    bool has(const char* key) const { return t_ && t_->get(key) != nullptr; }
    void mark(std::string key) { used_.insert(std::move(key)); }

    void finish() const {
        if (!t_) return;
        for (auto&& [k, v] : *t_) {
            (void)v;
            if (!used_.count(std::string(k.str())))
                throw std::invalid_argument(fmt::format("config: unknown key '{}' in {}", k.str(), where()));
        }
    }

private:
    std::string where() const { return name_.empty() ? "top level" : "[" + name_ + "]"; }

    [[noreturn]] void bad(const char* key, const char* want) const {
        throw std::invalid_argument(fmt::format("config: {}.{} must be {}", name_.empty() ? "" : name_, key, want));
    }

    std::int64_t integer(const toml::node& n, const char* key) const {
        auto v = n.value_exact<std::int64_t>();
        if (!v) bad(key, "an integer");
        return *v;
    }

    void read(const toml::node& n, const char* key, int& out) const {
        const auto v = integer(n, key);
        if (v < -2147483647LL || v > 2147483647LL) bad(key, "a 32-bit integer");
        out = static_cast<int>(v);
    }
    void read(const toml::node& n, const char* key, std::size_t& out) const {
        const auto v = integer(n, key);
        if (v < 0) bad(key, "a non-negative integer");
        out = static_cast<std::size_t>(v);
    }
    void read(const toml::node& n, const char* key, double& out) const {
        if (auto v = n.value_exact<double>()) {
            out = *v;
        } else if (auto i = n.value_exact<std::int64_t>()) {
            out = static_cast<double>(*i);
        } else {
            bad(key, "a number");
        }
    }
    void read(const toml::node& n, const char* key, bool& out) const {
        auto v = n.value_exact<bool>();
        if (!v) bad(key, "true or false");
        out = *v;
    }
    void read(const toml::node& n, const char* key, std::string& out) const {
        auto v = n.value_exact<std::string>();
        if (!v) bad(key, "a string");
        out = *v;
    }
    void read(const toml::node& n, const char* key, std::filesystem::path& out) const {
        std::string s;
        read(n, key, s);
        std::filesystem::path p(s);
        out = !s.empty() && p.is_relative() && !base_.empty() ? (base_ / p).lexically_normal() : p;
    }
    void read(const toml::node& n, const char* key, std::vector<double>& out) const {
        const auto* a = n.as_array();
        if (!a) bad(key, "an array of numbers");
        out.clear();
        for (const auto& e : *a) {
            double d = 0.0;
            read(e, key, d);
            out.push_back(d);
        }
    }
    void read(const toml::node& n, const char* key, std::vector<std::size_t>& out) const {
        const auto* a = n.as_array();
        if (!a) bad(key, "an array of integers");
        out.clear();
        for (const auto& e : *a) {
            std::size_t v = 0;
            read(e, key, v);
            out.push_back(v);
        }
    }

    const toml::table* t_;
    std::string name_;
    std::filesystem::path base_;
    std::set<std::string> used_;
};

std::string toml_double(double v) {
    auto s = fmt::format("{}", v);
    if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
    return s;
}

std::string toml_string(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    return out + '"';
}

}  // namespace

void RunConfig::set_seed(std::uint64_t root) {
    seed = root;
    synth.seed = derive_seed(root, "synth");
    gbdt.params.seed = derive_seed(root, "gbdt");
    rnn.seed = derive_seed(root, "rnn");
}

std::vector<double> RunConfig::decay_fractions() const {
    return analysis.fractions.empty() ? default_fractions(analysis.decay_points) : analysis.fractions;
}

RunConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
    toml::table root;
    try {
        root = toml::parse(text);
    } catch (const toml::parse_error& e) {
        throw std::invalid_argument(fmt::format("config: {} (line {})", e.description(), e.source().begin.line));
    }
    static const std::set<std::string> known{"data", "synth", "gbdt", "rnn", "ensemble", "analysis"};
    RunConfig c;
    Section top(&root, "", base_dir);
    for (auto&& [k, v] : root) {
        if (!v.is_table()) continue;
        if (!known.count(std::string(k.str())))
            throw std::invalid_argument(fmt::format("config: unknown section [{}]", k.str()));
        top.mark(std::string(k.str()));
    }
    std::uint64_t seed = c.seed;
    top.get("seed", seed);
    top.get("tag", c.tag);
    top.get("out_dir", c.out_dir);
    top.finish();
    if (c.out_dir.is_relative() && !base_dir.empty() && !root.get("out_dir"))
        c.out_dir = (base_dir / c.out_dir).lexically_normal();

    auto section = [&](const char* name) { return Section(root[name].as_table(), name, base_dir); };

    {
        auto s = section("data");
        s.get("train", c.data.train);
        s.get("dev", c.data.dev);
        s.get("dev_key", c.data.dev_key);
        s.get("test", c.data.test);
        s.get("test_key", c.data.test_key);
        s.finish();
        if (c.data.given() && c.data.dev.empty())
            throw std::invalid_argument("config: [data] needs dev alongside train");
    }
    {
        auto s = section("synth");
        auto& y = c.synth;
        s.get("n_users", y.n_users);
        s.get("n_days", y.n_days);
        s.get("exercises_per_user", y.exercises_per_user);
        s.get("vocab_size", y.vocab_size);
        s.get("token_frequency_exponent", y.token_frequency_exponent);
        s.get("user_skill_sd", y.user_skill_sd);
        s.get("token_difficulty_sd", y.token_difficulty_sd);
        s.get("token_difficulty_mean", y.token_difficulty_mean);
        s.get("learning_rate_mean", y.learning_rate_mean);
        s.get("nonstationarity_drift", y.nonstationarity_drift);
        s.get("min_sentence_len", y.min_sentence_len);
        s.get("max_sentence_len", y.max_sentence_len);
        s.get("language_pair", y.language_pair);
        s.finish();
    }
    {
        auto s = section("gbdt");
        auto& g = c.gbdt;
        s.get("preset", g.preset);
        if (g.preset != "desk") g.params = gbdt::preset_params(g.preset);
        auto& p = g.params;
        s.get("num_leaves", p.num_leaves);
        s.get("n_estimators", p.n_estimators);
        s.get("learning_rate", p.learning_rate);
        s.get("feature_fraction", p.feature_fraction);
        s.get("early_stopping_round", p.early_stopping_round);
        s.get("max_bins", p.max_bins);
        s.get("min_data_in_leaf", p.min_data_in_leaf);
        s.get("lambda_l2", p.lambda_l2);
        s.get("min_gain", p.min_gain);
        s.get("cat_smooth", p.cat_smooth);
        s.get("cat_l2", p.cat_l2);
        s.get("min_data_per_group", p.min_data_per_group);
        s.get("max_cat_threshold", p.max_cat_threshold);
        s.get("use_user", g.use_user);
        s.get("use_morph", g.use_morph);
        s.get("final_refit", g.final_refit);
        s.finish();
    }
    {
        auto s = section("rnn");
        auto& r = c.rnn;
        s.get("embed_dim", r.embed_dim);
        s.get("recurrent_units", r.recurrent_units);
        s.get("ff_units", r.ff_units);
        s.get("subseq_len", r.subseq_len);
        s.get("batch_size", r.batch_size);
        s.get("epochs", r.epochs);
        s.get("learning_rate", r.learning_rate);
        s.get("dropout_p", r.dropout_p);
        s.get("l2_coeff", r.l2_coeff);
        s.get("dev_eval_fraction", r.dev_eval_fraction);
        s.get("cross_buckets", r.cross_buckets);
        s.get("bidirectional", r.bidirectional);
        s.finish();
    }
    {
        auto s = section("ensemble");
        s.get("step", c.ensemble_step);
        s.finish();
        if (!(c.ensemble_step > 0.0 && c.ensemble_step <= 1.0))
            throw std::invalid_argument("config: ensemble.step must be in (0, 1]");
    }
    {
        auto s = section("analysis");
        auto& a = c.analysis;
        s.get("decay_points", a.decay_points);
        s.get("fractions", a.fractions);
        s.get("rarity_share", a.rarity_share);
        s.get("rarity_cuts", a.rarity_cuts);
        s.get("top_k", a.top_k);
        s.finish();
        if (a.decay_points < 1) throw std::invalid_argument("config: analysis.decay_points must be >= 1");
        if (!(a.rarity_share > 0.0 && a.rarity_share <= 1.0))
            throw std::invalid_argument("config: analysis.rarity_share must be in (0, 1]");
    }

    c.set_seed(seed);
    c.synth.validate();
    c.gbdt.params.validate();
    c.rnn.validate();
    return c;
}

RunConfig load_config(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot read config file " + file.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), file.parent_path());
}

std::string dump_config(const RunConfig& c) {
    std::string o;
    auto line = [&](std::string_view k, const std::string& v) { o += fmt::format("{} = {}\n", k, v); };
    auto num = [](auto v) { return fmt::format("{}", v); };
    auto path = [](const std::filesystem::path& p) { return toml_string(p.generic_string()); };
    auto flag = [](bool b) { return std::string(b ? "true" : "false"); };

    line("seed", num(c.seed));
    line("tag", toml_string(c.tag));
    line("out_dir", path(c.out_dir));
    o += "\n[data]\n";
    line("train", path(c.data.train));
    line("dev", path(c.data.dev));
    line("dev_key", path(c.data.dev_key));
    line("test", path(c.data.test));
    line("test_key", path(c.data.test_key));
    const auto& y = c.synth;
    o += "\n[synth]\n";
    line("n_users", num(y.n_users));
    line("n_days", toml_double(y.n_days));
    line("exercises_per_user", num(y.exercises_per_user));
    line("vocab_size", num(y.vocab_size));
    line("token_frequency_exponent", toml_double(y.token_frequency_exponent));
    line("user_skill_sd", toml_double(y.user_skill_sd));
    line("token_difficulty_sd", toml_double(y.token_difficulty_sd));
    line("token_difficulty_mean", toml_double(y.token_difficulty_mean));
    line("learning_rate_mean", toml_double(y.learning_rate_mean));
    line("nonstationarity_drift", toml_double(y.nonstationarity_drift));
    line("min_sentence_len", num(y.min_sentence_len));
    line("max_sentence_len", num(y.max_sentence_len));
    line("language_pair", toml_string(y.language_pair));
    const auto& g = c.gbdt;
    o += "\n[gbdt]\n";
    line("preset", toml_string(g.preset));
    line("num_leaves", num(g.params.num_leaves));
    line("n_estimators", num(g.params.n_estimators));
    line("learning_rate", toml_double(g.params.learning_rate));
    line("feature_fraction", toml_double(g.params.feature_fraction));
    line("early_stopping_round", num(g.params.early_stopping_round));
    line("max_bins", num(g.params.max_bins));
    line("min_data_in_leaf", num(g.params.min_data_in_leaf));
    line("lambda_l2", toml_double(g.params.lambda_l2));
    line("min_gain", toml_double(g.params.min_gain));
    line("cat_smooth", toml_double(g.params.cat_smooth));
    line("cat_l2", toml_double(g.params.cat_l2));
    line("min_data_per_group", num(g.params.min_data_per_group));
    line("max_cat_threshold", num(g.params.max_cat_threshold));
    line("use_user", flag(g.use_user));
    line("use_morph", flag(g.use_morph));
    line("final_refit", flag(g.final_refit));
    const auto& r = c.rnn;
    o += "\n[rnn]\n";
    line("embed_dim", num(r.embed_dim));
    line("recurrent_units", num(r.recurrent_units));
    line("ff_units", num(r.ff_units));
    line("subseq_len", num(r.subseq_len));
    line("batch_size", num(r.batch_size));
    line("epochs", num(r.epochs));
    line("learning_rate", toml_double(r.learning_rate));
    line("dropout_p", toml_double(r.dropout_p));
    line("l2_coeff", toml_double(r.l2_coeff));
    line("dev_eval_fraction", toml_double(r.dev_eval_fraction));
    line("cross_buckets", num(r.cross_buckets));
    line("bidirectional", flag(r.bidirectional));
    o += "\n[ensemble]\n";
    line("step", toml_double(c.ensemble_step));
    const auto& a = c.analysis;
    o += "\n[analysis]\n";
    line("decay_points", num(a.decay_points));
    std::vector<std::string> fr;
    for (double f : a.fractions) fr.push_back(toml_double(f));
    line("fractions", "[" + fmt::format("{}", fmt::join(fr, ", ")) + "]");
    line("rarity_share", toml_double(a.rarity_share));
    line("rarity_cuts", "[" + fmt::format("{}", fmt::join(a.rarity_cuts, ", ")) + "]");
    line("top_k", num(a.top_k));
    return o;
}

}  // namespace slamkit
