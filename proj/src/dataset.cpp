#include "slamkit/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <unordered_set>

#include <fmt/format.h>

#include "slamkit/error.hpp"
#include "text_util.hpp"

namespace slamkit {

std::string_view to_string(Client c) noexcept {
    switch (c) {
        case Client::web: return "web";
        case Client::ios: return "ios";
        case Client::android: return "android";
    }
    return "web";
}

std::string_view to_string(SessionType s) noexcept {
    switch (s) {
        case SessionType::lesson: return "lesson";
        case SessionType::practice: return "practice";
        case SessionType::test: return "test";
    }
    return "lesson";
}

std::string_view to_string(ExerciseFormat f) noexcept {
    switch (f) {
        case ExerciseFormat::reverse_translate: return "reverse_translate";
        case ExerciseFormat::reverse_tap: return "reverse_tap";
        case ExerciseFormat::listen: return "listen";
    }
    return "reverse_translate";
}

std::string_view to_string(Partition p) noexcept {
    switch (p) {
        case Partition::train: return "train";
        case Partition::dev: return "dev";
        case Partition::test: return "test";
    }
    return "train";
}

std::optional<Client> parse_client(std::string_view s) noexcept {
    if (s == "web") return Client::web;
    if (s == "ios") return Client::ios;
    if (s == "android") return Client::android;
    return std::nullopt;
}

std::optional<SessionType> parse_session(std::string_view s) noexcept {
    if (s == "lesson") return SessionType::lesson;
    if (s == "practice") return SessionType::practice;
    if (s == "test") return SessionType::test;
    return std::nullopt;
}

std::optional<ExerciseFormat> parse_format(std::string_view s) noexcept {
    if (s == "reverse_translate") return ExerciseFormat::reverse_translate;
    if (s == "reverse_tap") return ExerciseFormat::reverse_tap;
    if (s == "listen") return ExerciseFormat::listen;
    return std::nullopt;
}

std::optional<Partition> parse_partition(std::string_view s) noexcept {
    if (s == "train") return Partition::train;
    if (s == "dev") return Partition::dev;
    if (s == "test") return Partition::test;
    return std::nullopt;
}

std::string lowercase(std::string_view s) {
    std::string out(s);
    for (auto& c : out) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return out;
}

std::string Exercise::exercise_key() const {
    std::string key;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) key += '_';
        key += lowercase(tokens[i].token);
    }
    return key;
}

std::size_t Dataset::num_exercises() const noexcept {
    std::size_t n = 0;
    for (const auto& u : users) n += u.exercises.size();
    return n;
}

std::size_t Dataset::num_tokens() const noexcept {
    std::size_t n = 0;
    for (const auto& u : users)
        for (const auto& e : u.exercises) n += e.tokens.size();
    return n;
}

namespace {

struct PendingExercise {
    Exercise ex;
    std::vector<std::size_t> token_lines;
    std::size_t header_line = 0;
};

void sort_timeline(UserTimeline& u) {
    std::stable_sort(u.exercises.begin(), u.exercises.end(),
                     [](const Exercise& a, const Exercise& b) {
                         if (a.meta.days != b.meta.days) return a.meta.days < b.meta.days;
                         return a.file_order < b.file_order;
                     });
}

ExerciseMeta parse_header(std::string_view body, std::size_t line_no) {
    ExerciseMeta meta;
    bool seen_user = false, seen_countries = false, seen_days = false, seen_client = false,
         seen_session = false, seen_format = false, seen_time = false;
    for (auto field : detail::split_ws(body)) {
        const auto colon = field.find(':');
        if (colon == std::string_view::npos)
            throw ParseError(line_no, "malformed header field '" + std::string(field) + "'");
        const auto key = field.substr(0, colon);
        const auto value = field.substr(colon + 1);
        auto once = [&](bool& seen) {
            if (seen) throw ParseError(line_no, "duplicate header key '" + std::string(key) + "'");
            seen = true;
        };
        if (key == "user") {
            once(seen_user);
            if (value.empty()) throw ParseError(line_no, "empty user id");
            meta.user = std::string(value);
        } else if (key == "countries") {
            once(seen_countries);
            for (auto c : detail::split(value, '|'))
                if (!c.empty()) meta.countries.emplace_back(c);
        } else if (key == "days") {
            once(seen_days);
            auto d = detail::parse_double(value);
            if (!d) throw ParseError(line_no, "non-numeric days '" + std::string(value) + "'");
            if (*d < 0.0 || !std::isfinite(*d))
                throw ParseError(line_no, "days must be non-negative");
            meta.days = *d;
        } else if (key == "client") {
            once(seen_client);
            auto c = parse_client(value);
            if (!c) throw ParseError(line_no, "unknown client '" + std::string(value) + "'");
            meta.client = *c;
        } else if (key == "session") {
            once(seen_session);
            auto s = parse_session(value);
            if (!s) throw ParseError(line_no, "unknown session '" + std::string(value) + "'");
            meta.session = *s;
        } else if (key == "format") {
            once(seen_format);
            auto f = parse_format(value);
            if (!f) throw ParseError(line_no, "unknown format '" + std::string(value) + "'");
            meta.format = *f;
        } else if (key == "time") {
            once(seen_time);
            if (value == "null") {
                meta.time.reset();
            } else {
                auto t = detail::parse_double(value);
                if (!t || !std::isfinite(*t))
                    throw ParseError(line_no, "non-numeric time '" + std::string(value) + "'");
                if (*t > 0.0) {
                    meta.time = *t;
                } else {
                    warn("line " + std::to_string(line_no) +
                         ": non-positive time treated as missing");
                }
            }
        } else {
            throw ParseError(line_no, "malformed header key '" + std::string(key) + "'");
        }
    }
    if (!seen_user) throw ParseError(line_no, "header lacks user");
    if (!seen_days) throw ParseError(line_no, "header lacks days");
    if (!seen_client || !seen_session || !seen_format)
        throw ParseError(line_no, "header lacks client/session/format");
    return meta;
}

}  // namespace

Dataset parse_dataset(std::istream& in, const LabelMap* labels, const ParseOptions& opts) {
    Dataset d;
    d.language_pair = opts.language_pair;
    std::unordered_map<std::string, std::size_t> user_index;
    std::unordered_set<std::string> seen_ids;
    std::optional<PendingExercise> cur;
    std::optional<std::string> pending_prompt;
    std::size_t file_order = 0;
    std::size_t line_no = 0;

    auto finish = [&]() {
        if (!cur) return;
        auto& p = *cur;
        if (p.ex.tokens.empty()) throw ParseError(p.header_line, "exercise has no tokens");
        const int n = static_cast<int>(p.ex.tokens.size());
        for (std::size_t i = 0; i < p.ex.tokens.size(); ++i) {
            auto& tok = p.ex.tokens[i];
            if (tok.dep_head < 0 || tok.dep_head > n)
                throw ParseError(p.token_lines[i], "dep_head " + std::to_string(tok.dep_head) +
                                                       " out of range for " + std::to_string(n) +
                                                       " tokens");
            if (tok.label == Label::unknown && labels) {
                auto it = labels->find(tok.instance_id);
                if (it != labels->end()) tok.label = it->second ? Label::mistake : Label::correct;
            }
            if (opts.require_labels && tok.label == Label::unknown)
                throw ValidationError("missing label for instance '" + tok.instance_id +
                                      "' (line " + std::to_string(p.token_lines[i]) + ")");
        }
        p.ex.partition = opts.partition;
        p.ex.file_order = file_order++;
        auto [it, inserted] = user_index.emplace(p.ex.meta.user, d.users.size());
        if (inserted) d.users.push_back(UserTimeline{p.ex.meta.user, {}});
        d.users[it->second].exercises.push_back(std::move(p.ex));
        cur.reset();
    };

    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::string_view sv = detail::trim(line);
        if (sv.empty()) {
            finish();
            continue;
        }
        if (sv.front() == '#') {
            auto body = detail::trim(sv.substr(1));
            if (body.starts_with("prompt:")) {
                finish();
                pending_prompt = std::string(body.substr(7));
                continue;
            }
            finish();
            cur.emplace();
            cur->header_line = line_no;
            cur->ex.meta = parse_header(body, line_no);
            cur->ex.meta.prompt = std::move(pending_prompt);
            pending_prompt.reset();
            continue;
        }
        if (!cur) throw ParseError(line_no, "token line outside an exercise block");
        auto fields = detail::split_ws(sv);
        if (fields.size() != 6 && fields.size() != 7)
            throw ParseError(line_no, "expected 6 or 7 token fields, got " +
                                          std::to_string(fields.size()));
        TokenInstance tok;
        tok.instance_id = std::string(fields[0]);
        if (!seen_ids.insert(tok.instance_id).second)
            throw ParseError(line_no, "duplicate instance_id '" + tok.instance_id + "'");
        tok.token = std::string(fields[1]);
        tok.pos = std::string(fields[2]);
        if (fields[3] != "_")
            for (auto m : detail::split(fields[3], '|'))
                if (!m.empty()) tok.morph.emplace_back(m);
        tok.dep_label = std::string(fields[4]);
        auto head = detail::parse_int(fields[5]);
        if (!head) throw ParseError(line_no, "non-integer dep_head '" + std::string(fields[5]) + "'");
        tok.dep_head = *head;
        if (fields.size() == 7) {
            if (fields[6] == "0") tok.label = Label::correct;
            else if (fields[6] == "1") tok.label = Label::mistake;
            else throw ParseError(line_no, "label must be 0 or 1");
        }
        cur->ex.tokens.push_back(std::move(tok));
        cur->token_lines.push_back(line_no);
    }
    finish();
    for (auto& u : d.users) sort_timeline(u);
    return d;
}

LabelMap parse_labels(std::istream& in) {
    LabelMap out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto sv = detail::trim(line);
        if (sv.empty()) continue;
        auto fields = detail::split_ws(sv);
        if (fields.size() != 2) throw ParseError(line_no, "expected 'instance_id label'");
        int v;
        if (fields[1] == "0") v = 0;
        else if (fields[1] == "1") v = 1;
        else throw ParseError(line_no, "label must be 0 or 1");
        if (!out.emplace(std::string(fields[0]), v).second)
            throw ParseError(line_no, "duplicate instance_id '" + std::string(fields[0]) + "'");
    }
    return out;
}

Dataset merge_datasets(std::vector<Dataset> parts) {
    Dataset d;
    std::unordered_map<std::string, std::size_t> user_index;
    std::size_t offset = 0;
    for (auto& part : parts) {
        if (d.language_pair.empty()) d.language_pair = part.language_pair;
        std::size_t max_order = 0;
        bool any = false;
        for (auto& u : part.users) {
            auto [it, inserted] = user_index.emplace(u.user, d.users.size());
            if (inserted) d.users.push_back(UserTimeline{u.user, {}});
            auto& dst = d.users[it->second].exercises;
            for (auto& e : u.exercises) {
                max_order = std::max(max_order, e.file_order);
                any = true;
                e.file_order += offset;
                dst.push_back(std::move(e));
            }
        }
        if (any) offset += max_order + 1;
    }
    for (auto& u : d.users) sort_timeline(u);
    return d;
}

void write_dataset(const Dataset& d, std::ostream& out, const WriteOptions& opts) {
    std::vector<const Exercise*> order;
    order.reserve(d.num_exercises());
    for (const auto& u : d.users)
        for (const auto& e : u.exercises)
            if (!opts.only || e.partition == *opts.only) order.push_back(&e);
    std::sort(order.begin(), order.end(),
              [](const Exercise* a, const Exercise* b) { return a->file_order < b->file_order; });

    for (const Exercise* e : order) {
        const auto& m = e->meta;
        if (m.prompt) out << "# prompt:" << *m.prompt << '\n';
        std::string countries;
        for (std::size_t i = 0; i < m.countries.size(); ++i) {
            if (i) countries += '|';
            countries += m.countries[i];
        }
        out << "# user:" << m.user << "  countries:" << countries
            << "  days:" << detail::format_number(m.days) << "  client:" << to_string(m.client)
            << "  session:" << to_string(m.session) << "  format:" << to_string(m.format)
            << "  time:" << (m.time ? detail::format_number(*m.time) : std::string("null")) << '\n';
        for (const auto& t : e->tokens) {
            std::string morph;
            for (std::size_t i = 0; i < t.morph.size(); ++i) {
                if (i) morph += '|';
                morph += t.morph[i];
            }
            if (morph.empty()) morph = "_";
            out << t.instance_id << "  " << t.token << "  " << t.pos << "  " << morph << "  "
                << t.dep_label << "  " << t.dep_head;
            if (opts.include_labels && t.label != Label::unknown)
                out << "  " << static_cast<int>(t.label);
            out << '\n';
        }
        out << '\n';
    }
}

void write_labels(const Dataset& d, std::ostream& out, std::optional<Partition> only) {
    std::vector<const Exercise*> order;
    for (const auto& u : d.users)
        for (const auto& e : u.exercises)
            if (!only || e.partition == *only) order.push_back(&e);
    std::sort(order.begin(), order.end(),
              [](const Exercise* a, const Exercise* b) { return a->file_order < b->file_order; });
    for (const Exercise* e : order)
        for (const auto& t : e->tokens)
            if (t.label != Label::unknown)
                out << t.instance_id << ' ' << static_cast<int>(t.label) << '\n';
}

SplitCounts split_counts(std::size_t n, double dev_frac, double test_frac) {
    if (!(dev_frac >= 0.0 && dev_frac < 1.0) || !(test_frac >= 0.0 && test_frac < 1.0))
        throw std::invalid_argument("split fractions must lie in [0, 1)");
    // The epsilon keeps products such as 0.29 * 100 = 28.999999999999996 at 29.
    constexpr double eps = 1e-9;
    SplitCounts c;
    c.test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * test_frac + eps));
    const std::size_t m = n - std::min(c.test, n);
    c.dev = static_cast<std::size_t>(std::floor(static_cast<double>(m) * dev_frac + eps));
    if (n > 0 && c.test + c.dev >= n) {
        // keep at least one train exercise
        const std::size_t excess = c.test + c.dev - (n - 1);
        const std::size_t from_dev = std::min(excess, c.dev);
        c.dev -= from_dev;
        c.test -= excess - from_dev;
    }
    c.train = n - c.test - c.dev;
    return c;
}

Dataset split_by_user_time(const Dataset& d, double dev_frac, double test_frac) {
    // validates fractions even for an empty dataset
    (void)split_counts(0, dev_frac, test_frac);
    Dataset out;
    out.language_pair = d.language_pair;
    for (const auto& u : d.users) {
        if (u.exercises.empty()) {
            warn("user '" + u.user + "' has no exercises; skipped");
            continue;
        }
        UserTimeline t = u;
        const auto c = split_counts(t.exercises.size(), dev_frac, test_frac);
        for (std::size_t i = 0; i < t.exercises.size(); ++i) {
            Partition p = Partition::train;
            if (i >= c.train + c.dev) p = Partition::test;
            else if (i >= c.train) p = Partition::dev;
            t.exercises[i].partition = p;
        }
        out.users.push_back(std::move(t));
    }
    return out;
}

void validate(const Dataset& d, const ValidateOptions& opts) {
    std::unordered_set<std::string_view> ids;
    for (const auto& u : d.users) {
        double prev_days = -1.0;
        int prev_part = 0;
        for (const auto& e : u.exercises) {
            if (e.meta.user != u.user)
                throw ValidationError("exercise filed under wrong user '" + u.user + "'");
            if (e.meta.days < 0.0) throw ValidationError("negative days for user '" + u.user + "'");
            if (e.meta.time && !(*e.meta.time > 0.0))
                throw ValidationError("non-positive time for user '" + u.user + "'");
            if (e.meta.days < prev_days)
                throw ValidationError("exercises of user '" + u.user + "' not time-ordered");
            prev_days = e.meta.days;
            const int part = static_cast<int>(e.partition);
            if (part < prev_part)
                throw ValidationError("partition tags of user '" + u.user +
                                      "' are not temporally monotone");
            prev_part = part;
            if (e.tokens.empty()) throw ValidationError("empty exercise for user '" + u.user + "'");
            const int n = static_cast<int>(e.tokens.size());
            const bool need = (e.partition == Partition::train && opts.labels_train) ||
                              (e.partition == Partition::dev && opts.labels_dev) ||
                              (e.partition == Partition::test && opts.labels_test);
            for (const auto& t : e.tokens) {
                if (!ids.insert(t.instance_id).second)
                    throw ValidationError("duplicate instance_id '" + t.instance_id + "'");
                if (t.dep_head < 0 || t.dep_head > n)
                    throw ValidationError("dep_head out of range for '" + t.instance_id + "'");
                if (need && t.label == Label::unknown)
                    throw ValidationError("missing label for instance '" + t.instance_id +
                                          "' in " + std::string(to_string(e.partition)) +
                                          " partition");
            }
        }
    }
}

}  // namespace slamkit
