#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace slamkit {

enum class Client : std::uint8_t { web, ios, android };
enum class SessionType : std::uint8_t { lesson, practice, test };
enum class ExerciseFormat : std::uint8_t { reverse_translate, reverse_tap, listen };
enum class Label : std::uint8_t { correct = 0, mistake = 1, unknown = 2 };
enum class Partition : std::uint8_t { train = 0, dev = 1, test = 2 };

std::string_view to_string(Client c) noexcept;
std::string_view to_string(SessionType s) noexcept;
std::string_view to_string(ExerciseFormat f) noexcept;
std::string_view to_string(Partition p) noexcept;
std::optional<Client> parse_client(std::string_view s) noexcept;
std::optional<SessionType> parse_session(std::string_view s) noexcept;
std::optional<ExerciseFormat> parse_format(std::string_view s) noexcept;
std::optional<Partition> parse_partition(std::string_view s) noexcept;

/// ASCII lowercase; multi-byte UTF-8 sequences pass through unchanged.
std::string lowercase(std::string_view s);

struct ExerciseMeta {
    std::string user;
    std::vector<std::string> countries;
    double days = 0.0;
    Client client = Client::web;
    SessionType session = SessionType::lesson;
    ExerciseFormat format = ExerciseFormat::reverse_translate;
    std::optional<double> time;    // seconds; absent when the file says null
    std::optional<std::string> prompt;
};

struct TokenInstance {
    std::string instance_id;
    std::string token;
    std::string pos;
    std::vector<std::string> morph;  // key=value entries
    std::string dep_label;
    int dep_head = 0;                // 1-based index into the exercise, 0 = root
    Label label = Label::unknown;
};

struct Exercise {
    ExerciseMeta meta;
    std::vector<TokenInstance> tokens;
    Partition partition = Partition::train;
    std::size_t file_order = 0;

    /// Lowercased token surfaces joined by '_'.
    std::string exercise_key() const;
};

struct UserTimeline {
    std::string user;
    std::vector<Exercise> exercises;  // sorted by (days, file_order)
};

struct Dataset {
    std::string language_pair;
    std::vector<UserTimeline> users;  // order of first appearance

    std::size_t num_exercises() const noexcept;
    std::size_t num_tokens() const noexcept;
};

using LabelMap = std::unordered_map<std::string, int>;

struct ParseOptions {
    Partition partition = Partition::train;
    /// Every token must end up with a 0/1 label (inline or from the map).
    bool require_labels = false;
    std::string language_pair;
};

/// Reads the shared-task exercise/token format. Throws ParseError (with the
/// offending line number) or ValidationError for missing required labels.
Dataset parse_dataset(std::istream& in, const LabelMap* labels = nullptr,
                      const ParseOptions& opts = {});

/// `instance_id {0|1}` per line.
LabelMap parse_labels(std::istream& in);

/// Combines separately parsed partitions (e.g. train/dev/test files) into one
/// dataset; file_order of later inputs is offset past earlier ones.
Dataset merge_datasets(std::vector<Dataset> parts);

struct WriteOptions {
    bool include_labels = true;
    std::optional<Partition> only;  // write only this partition
};

/// Inverse of parse_dataset, exercises written in file order.
void write_dataset(const Dataset& d, std::ostream& out, const WriteOptions& opts = {});

/// Writes `instance_id label` for every labeled token (optionally one partition).
void write_labels(const Dataset& d, std::ostream& out,
                  std::optional<Partition> only = std::nullopt);

struct SplitCounts {
    std::size_t train = 0;
    std::size_t dev = 0;
    std::size_t test = 0;
};

/// Per-user split rule on n exercises: last floor(n*test_frac) are test, of the
/// remaining m the last floor(m*dev_frac) are dev, the rest train.
SplitCounts split_counts(std::size_t n, double dev_frac, double test_frac);

/// Re-tags every exercise by the per-user temporal rule above.
Dataset split_by_user_time(const Dataset& d, double dev_frac, double test_frac);

struct ValidateOptions {
    bool labels_train = true;
    bool labels_dev = false;
    bool labels_test = false;
};

/// Checks the dataset invariants (unique ids, dep_head range, time ordering,
/// monotone partitions, labels where expected). Throws ValidationError.
void validate(const Dataset& d, const ValidateOptions& opts = {});

}  // namespace slamkit
