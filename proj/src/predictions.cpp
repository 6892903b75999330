#include "slamkit/predictions.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

#include <fmt/format.h>

#include "slamkit/error.hpp"
#include "text_util.hpp"

namespace slamkit {

void PredictionSet::add(std::string id, double p) {
    auto [it, inserted] = index_.emplace(id, entries_.size());
    if (!inserted) throw std::invalid_argument("duplicate prediction id '" + id + "'");
    entries_.push_back(Entry{std::move(id), p});
}

std::optional<double> PredictionSet::find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return entries_[it->second].p;
}

double PredictionSet::at(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw std::out_of_range("no prediction for '" + id + "'");
    return entries_[it->second].p;
}

bool PredictionSet::same_ids(const PredictionSet& other) const {
    if (size() != other.size()) return false;
    for (const auto& e : entries_)
        if (!other.contains(e.id)) return false;
    return true;
}

void write_predictions(const PredictionSet& p, std::ostream& out) {
    for (const auto& e : p.entries())
        if (!(e.p >= 0.0 && e.p <= 1.0))
            throw std::invalid_argument("probability for '" + e.id + "' outside [0,1]");
    std::string buf;
    for (const auto& e : p.entries()) {
        buf.clear();
        fmt::format_to(std::back_inserter(buf), "{} {:.6f}\n", e.id, e.p);
        out << buf;
    }
}

PredictionSet read_predictions(std::istream& in) {
    PredictionSet p;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto sv = detail::trim(line);
        if (sv.empty()) continue;
        auto fields = detail::split_ws(sv);
        if (fields.size() != 2) throw ParseError(line_no, "expected 'instance_id probability'");
        auto v = detail::parse_double(fields[1]);
        if (!v || !(*v >= 0.0 && *v <= 1.0))
            throw ParseError(line_no, "probability must be a number in [0,1]");
        try {
            p.add(std::string(fields[0]), *v);
        } catch (const std::invalid_argument& e) {
            throw ParseError(line_no, e.what());
        }
    }
    return p;
}

LabeledScores align_labels(const PredictionSet& p, const Dataset& d) {
    std::unordered_map<std::string_view, Label> labels;
    for (const auto& u : d.users)
        for (const auto& e : u.exercises)
            for (const auto& t : e.tokens) labels.emplace(t.instance_id, t.label);
    LabeledScores out;
    out.labels.reserve(p.size());
    out.scores.reserve(p.size());
    for (const auto& e : p.entries()) {
        auto it = labels.find(e.id);
        if (it == labels.end())
            throw ValidationError("prediction id '" + e.id + "' not in dataset");
        if (it->second == Label::unknown)
            throw ValidationError("instance '" + e.id + "' has no label");
        out.labels.push_back(static_cast<int>(it->second));
        out.scores.push_back(e.p);
    }
    return out;
}

std::unordered_map<std::string, int> partition_labels(const Dataset& d, Partition part) {
    std::unordered_map<std::string, int> out;
    for (const auto& u : d.users)
        for (const auto& e : u.exercises)
            if (e.partition == part)
                for (const auto& t : e.tokens)
                    if (t.label != Label::unknown)
                        out.emplace(t.instance_id, static_cast<int>(t.label));
    return out;
}

}  // namespace slamkit
