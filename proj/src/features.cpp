#include "slamkit/features.hpp"

#include <algorithm>
#include <map>
#include <ostream>

#include <fmt/format.h>

#include "slamkit/error.hpp"
#include "slamkit/rng.hpp"
#include "text_util.hpp"

namespace slamkit {

std::string_view cat_name(Cat c) noexcept {
    switch (c) {
        case Cat::token: return "token";
        case Cat::pos: return "pos";
        case Cat::dep_label: return "dep_label";
        case Cat::format: return "format";
        case Cat::client: return "client";
        case Cat::session: return "session";
        case Cat::countries: return "countries";
        case Cat::user: return "user";
        case Cat::exercise_key: return "exercise_key";
        case Cat::preceding_token: return "preceding_token";
    }
    return "?";
}

namespace {

std::string join(const std::vector<std::string>& parts, char sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

std::pair<std::string_view, std::string_view> split_morph(std::string_view kv) {
    const auto eq = kv.find('=');
    if (eq == std::string_view::npos) return {kv, std::string_view{}};
    return {kv.substr(0, eq), kv.substr(eq + 1)};
}

/// Categorical values of one token, in Cat order; empty means missing.
std::array<std::string, kNumCat> cat_values(const Exercise& e, std::size_t ti,
                                            const std::string& key) {
    const auto& t = e.tokens[ti];
    std::array<std::string, kNumCat> v;
    v[0] = lowercase(t.token);
    v[1] = t.pos;
    v[2] = t.dep_label;
    v[3] = std::string(to_string(e.meta.format));
    v[4] = std::string(to_string(e.meta.client));
    v[5] = std::string(to_string(e.meta.session));
    v[6] = join(e.meta.countries, '|');
    v[7] = e.meta.user;
    v[8] = key;
    if (ti > 0) v[9] = lowercase(e.tokens[ti - 1].token);
    return v;
}

}  // namespace

std::int32_t Vocab::id(Cat c, std::string_view value) const {
    const auto& m = ids_[idx(c)];
    auto it = m.find(std::string(value));
    return it == m.end() ? 0 : it->second;
}

std::int32_t Vocab::add(Cat c, const std::string& value) {
    auto& m = ids_[idx(c)];
    auto [it, inserted] = m.emplace(value, static_cast<std::int32_t>(values_[idx(c)].size() + 1));
    if (inserted) values_[idx(c)].push_back(value);
    return it->second;
}

std::int32_t Vocab::morph_id(std::size_t key_index, std::string_view value) const {
    const auto& m = morph_ids_[key_index];
    auto it = m.find(std::string(value));
    return it == m.end() ? 0 : it->second;
}

std::uint64_t Vocab::hash() const noexcept {
    std::uint64_t h = fnv1a64("slamkit.vocab.v1");
    for (std::size_t c = 0; c < kNumCat; ++c) {
        h = fnv1a64(fmt::format("#{}:{}", c, values_[c].size()), h);
        for (const auto& v : values_[c]) {
            h = fnv1a64(v, h);
            h = fnv1a64(std::string_view("\x1f", 1), h);
        }
    }
    for (std::size_t k = 0; k < morph_keys_.size(); ++k) {
        h = fnv1a64(morph_keys_[k], h);
        for (const auto& v : morph_values_[k]) {
            h = fnv1a64(v, h);
            h = fnv1a64(std::string_view("\x1f", 1), h);
        }
    }
    return h;
}

Vocab build_vocab(const Dataset& d) {
    Vocab v;
    std::map<std::string, std::int64_t> key_counts;
    bool any = false;
    for (const auto& u : d.users) {
        for (const auto& e : u.exercises) {
            if (e.partition != Partition::train) continue;
            any = true;
            const std::string key = e.exercise_key();
            for (std::size_t ti = 0; ti < e.tokens.size(); ++ti) {
                const auto vals = cat_values(e, ti, key);
                for (std::size_t c = 0; c < kNumCat; ++c)
                    if (!vals[c].empty()) v.add(static_cast<Cat>(c), vals[c]);
                const auto tid = static_cast<std::size_t>(v.id(Cat::token, vals[0]));
                if (v.token_freq_.size() <= tid) v.token_freq_.resize(tid + 1, 0);
                ++v.token_freq_[tid];
                for (const auto& m : e.tokens[ti].morph) ++key_counts[std::string(split_morph(m).first)];
            }
        }
    }
    if (!any) throw ValidationError("vocabulary needs a non-empty train partition");

    std::vector<std::pair<std::string, std::int64_t>> keys(key_counts.begin(), key_counts.end());
    std::stable_sort(keys.begin(), keys.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    if (keys.size() > Vocab::kMaxMorphKeys) keys.resize(Vocab::kMaxMorphKeys);
    for (const auto& [k, n] : keys) v.morph_keys_.push_back(k);
    v.morph_ids_.resize(v.morph_keys_.size());
    v.morph_values_.resize(v.morph_keys_.size());
    for (const auto& u : d.users) {
        for (const auto& e : u.exercises) {
            if (e.partition != Partition::train) continue;
            for (const auto& t : e.tokens) {
                for (const auto& m : t.morph) {
                    const auto [key, value] = split_morph(m);
                    auto kit = std::find(v.morph_keys_.begin(), v.morph_keys_.end(), key);
                    if (kit == v.morph_keys_.end()) continue;
                    const auto k = static_cast<std::size_t>(kit - v.morph_keys_.begin());
                    auto [it, inserted] = v.morph_ids_[k].emplace(
                        std::string(value), static_cast<std::int32_t>(v.morph_values_[k].size() + 1));
                    if (inserted) v.morph_values_[k].emplace_back(value);
                }
            }
        }
    }
    return v;
}

std::vector<FeatureRow> engineer(const Dataset& d, const Vocab& v) {
    std::vector<FeatureRow> rows;
    rows.reserve(d.num_tokens());
    const auto& keys = v.morph_keys();
    for (std::size_t ui = 0; ui < d.users.size(); ++ui) {
        const auto& u = d.users[ui];
        double max_days = 0.0;
        for (std::size_t i = 0; i < u.exercises.size(); ++i) {
            if (i > 0 && u.exercises[i].meta.days < u.exercises[i - 1].meta.days)
                throw ValidationError("exercises of user '" + u.user + "' are not time-ordered");
            max_days = std::max(max_days, u.exercises[i].meta.days);
        }
        std::unordered_map<std::string, std::pair<int, double>> history;  // token -> (count, last day)
        int session_index = 0;
        const Exercise* prev = nullptr;
        for (const auto& e : u.exercises) {
            if (prev && prev->meta.session == e.meta.session &&
                e.meta.days - prev->meta.days <= kSessionGapDays)
                ++session_index;
            else
                session_index = 1;
            prev = &e;
            const std::string key = e.exercise_key();
            const int n = static_cast<int>(e.tokens.size());
            std::vector<std::int32_t> token_ids(e.tokens.size());
            for (std::size_t ti = 0; ti < e.tokens.size(); ++ti)
                token_ids[ti] = v.id(Cat::token, lowercase(e.tokens[ti].token));
            for (std::size_t ti = 0; ti < e.tokens.size(); ++ti) {
                const auto& t = e.tokens[ti];
                FeatureRow r;
                r.instance_id = t.instance_id;
                r.user_index = ui;
                r.partition = e.partition;
                r.label = t.label;
                const auto vals = cat_values(e, ti, key);
                for (std::size_t c = 0; c < kNumCat; ++c)
                    r.cat[c] = vals[c].empty() ? 0 : v.id(static_cast<Cat>(c), vals[c]);
                r.morph.assign(keys.size(), 0);
                for (const auto& m : t.morph) {
                    const auto [mk, mv] = split_morph(m);
                    for (std::size_t k = 0; k < keys.size(); ++k)
                        if (keys[k] == mk) r.morph[k] = v.morph_id(k, mv);
                }
                r.dep_token = t.dep_head >= 1 && t.dep_head <= n ? token_ids[t.dep_head - 1] : 0;
                r.days = e.meta.days;
                r.time = e.meta.time;
                auto& h = history[vals[0]];
                r.practice_count = h.first;
                if (h.first > 0) r.time_since_token = e.meta.days - h.second;
                h.first += 1;
                h.second = e.meta.days;
                r.token_pos_index = static_cast<int>(ti) + 1;
                r.sentence_len = n;
                r.exercise_index_in_session = session_index;
                r.user_time_norm = max_days > 0.0 ? e.meta.days / max_days : 1.0;
                rows.push_back(std::move(r));
            }
        }
    }
    return rows;
}

std::vector<FeatureRow> select_partition(const std::vector<FeatureRow>& rows, Partition p) {
    std::vector<FeatureRow> out;
    for (const auto& r : rows)
        if (r.partition == p) out.push_back(r);
    return out;
}

void write_feature_csv(const std::vector<FeatureRow>& rows, const Vocab& v, std::ostream& out) {
    out << "instance_id,partition,label";
    for (std::size_t c = 0; c < kNumCat; ++c) out << ',' << cat_name(static_cast<Cat>(c));
    out << ",dep_token";
    for (const auto& k : v.morph_keys()) out << ",morph:" << k;
    out << ",days,time,practice_count,time_since_token,token_pos_index,sentence_len,"
           "exercise_index_in_session,user_time_norm\n";
    for (const auto& r : rows) {
        out << r.instance_id << ',' << to_string(r.partition) << ',';
        if (r.label != Label::unknown) out << static_cast<int>(r.label);
        for (auto id : r.cat) out << ',' << id;
        out << ',' << r.dep_token;
        for (auto id : r.morph) out << ',' << id;
        out << ',' << detail::format_number(r.days) << ',';
        if (r.time) out << detail::format_number(*r.time);
        out << ',' << r.practice_count << ',';
        if (r.time_since_token) out << detail::format_number(*r.time_since_token);
        out << ',' << r.token_pos_index << ',' << r.sentence_len << ','
            << r.exercise_index_in_session << ',' << detail::format_number(r.user_time_norm) << '\n';
    }
}

FeatureMatrix to_tabular(const std::vector<FeatureRow>& rows, const Vocab& v,
                         const TabularOptions& opts) {
    std::vector<ColumnSpec> cols;
    using K = ColumnKind;
    cols.push_back({"token", K::categorical});
    if (opts.use_user) cols.push_back({"user", K::categorical});
    for (const char* name : {"format", "exercise_key", "pos", "dep_label", "client", "session",
                             "countries", "preceding_token", "dep_token"})
        cols.push_back({name, K::categorical});
    if (opts.use_morph)
        for (const auto& k : v.morph_keys()) cols.push_back({"morph:" + k, K::categorical});
    for (const char* name : {"days", "time", "practice_count", "time_since_token",
                             "token_pos_index", "sentence_len", "exercise_index_in_session"})
        cols.push_back({name, K::numeric});

    FeatureMatrix m(std::move(cols));
    std::vector<double> buf;
    for (const auto& r : rows) {
        buf.clear();
        auto cat = [&](Cat c) { buf.push_back(r.cat[static_cast<std::size_t>(c)]); };
        cat(Cat::token);
        if (opts.use_user) cat(Cat::user);
        cat(Cat::format);
        cat(Cat::exercise_key);
        cat(Cat::pos);
        cat(Cat::dep_label);
        cat(Cat::client);
        cat(Cat::session);
        cat(Cat::countries);
        cat(Cat::preceding_token);
        buf.push_back(r.dep_token);
        if (opts.use_morph)
            for (auto id : r.morph) buf.push_back(id);
        buf.push_back(r.days);
        buf.push_back(r.time ? *r.time : FeatureMatrix::missing);
        buf.push_back(r.practice_count);
        buf.push_back(r.time_since_token ? *r.time_since_token : FeatureMatrix::missing);
        buf.push_back(r.token_pos_index);
        buf.push_back(r.sentence_len);
        buf.push_back(r.exercise_index_in_session);
        m.add_row(buf);
    }
    return m;
}

std::vector<int> labels_of(const std::vector<FeatureRow>& rows) {
    std::vector<int> out;
    out.reserve(rows.size());
    for (const auto& r : rows) {
        if (r.label == Label::unknown)
            throw ValidationError("row '" + r.instance_id + "' has no label");
        out.push_back(static_cast<int>(r.label));
    }
    return out;
}

}  // namespace slamkit
