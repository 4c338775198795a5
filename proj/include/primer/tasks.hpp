#pragma once

// Synthetic few-shot text-to-text tasks, task splits, and the on-disk task format
// (tasks/<name>/{train,dev,test}.jsonl + meta.json).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "primer/error.hpp"
#include "primer/model.hpp"

namespace primer {

enum class TaskType { Classification, Generation };

inline std::string_view to_string(TaskType t) {
    return t == TaskType::Classification ? "classification" : "generation";
}

inline TaskType task_type_from_string(std::string_view s) {
    if (s == "classification") return TaskType::Classification;
    if (s == "generation") return TaskType::Generation;
    throw InputError("unknown task_type '" + std::string(s) + "'");
}

struct TaskDataset {
    std::string name;
    TaskType task_type = TaskType::Generation;
    std::vector<std::string> labels;  // classification only
    std::vector<Example> train;
    std::vector<Example> dev;
    std::vector<Example> test;

    friend bool operator==(const TaskDataset&, const TaskDataset&) = default;
};

/// Few-shot cardinalities enforced on every task.
struct FewShotSizes {
    std::size_t shots_per_class = 16;
    std::size_t shots = 32;
    std::size_t dev = 32;
    std::size_t test = 32;
};

/// Throws InputError naming the first violated cardinality or disjointness rule.
inline void validate_task(const TaskDataset& task, const FewShotSizes& sizes = {}) {
    const std::string where = "task '" + task.name + "': ";
    if (task.task_type == TaskType::Classification) {
        detail::require_input(task.labels.size() >= 2, where + "classification task needs at least 2 labels");
        std::map<std::string, std::size_t> counts;
        for (const auto& l : task.labels) counts[l] = 0;
        detail::require_input(counts.size() == task.labels.size(), where + "duplicate label");
        for (const auto& ex : task.train) {
            auto it = counts.find(ex.output);
            detail::require_input(it != counts.end(), where + "train output '" + ex.output + "' is not a label");
            ++it->second;
        }
        for (const auto& [label, n] : counts) {
            detail::require_input(n == sizes.shots_per_class, where + "label '" + label + "' has " + std::to_string(n) +
                                                                   " train examples, expected " +
                                                                   std::to_string(sizes.shots_per_class));
        }
    } else {
        detail::require_input(task.train.size() == sizes.shots, where + "train has " + std::to_string(task.train.size()) +
                                                                    " examples, expected " + std::to_string(sizes.shots));
    }
    detail::require_input(task.dev.size() == sizes.dev, where + "dev has " + std::to_string(task.dev.size()) +
                                                            " examples, expected " + std::to_string(sizes.dev));
    detail::require_input(task.test.size() == sizes.test, where + "test has " + std::to_string(task.test.size()) +
                                                              " examples, expected " + std::to_string(sizes.test));
    std::map<std::string, std::string> seen;  // input -> split
    for (const auto& [split, examples] :
         {std::pair{"train", &task.train}, std::pair{"dev", &task.dev}, std::pair{"test", &task.test}}) {
        for (const auto& ex : *examples) {
            auto [it, inserted] = seen.emplace(ex.input, split);
            detail::require_input(inserted || it->second == split,
                                  where + "input '" + ex.input + "' appears in both " + it->second + " and " + split);
        }
    }
}

// ---------------------------------------------------------------------------
// Generators

enum class TaskFamily { KeywordSentiment, CharParity, VowelBucket, Copy, Reverse, CaseFlip, MarkerExtraction };

inline constexpr std::array<TaskFamily, 7> kAllTaskFamilies = {
    TaskFamily::KeywordSentiment, TaskFamily::CharParity, TaskFamily::VowelBucket,     TaskFamily::Copy,
    TaskFamily::Reverse,          TaskFamily::CaseFlip,   TaskFamily::MarkerExtraction};

/// Upper bounds on generated text, in characters, used when sizing models and decode budgets.
inline constexpr std::size_t kMaxGeneratedInput = 20;
inline constexpr std::size_t kMaxGeneratedOutput = 10;

inline std::string_view to_string(TaskFamily f) {
    switch (f) {
        case TaskFamily::KeywordSentiment: return "keyword_sentiment";
        case TaskFamily::CharParity: return "char_parity";
        case TaskFamily::VowelBucket: return "vowel_bucket";
        case TaskFamily::Copy: return "copy";
        case TaskFamily::Reverse: return "reverse";
        case TaskFamily::CaseFlip: return "case_flip";
        case TaskFamily::MarkerExtraction: return "marker_extraction";
    }
    return "?";
}

inline TaskFamily task_family_from_string(std::string_view s) {
    for (auto f : kAllTaskFamilies) {
        if (to_string(f) == s) return f;
    }
    throw InputError("unknown task generator '" + std::string(s) + "'");
}

namespace detail {

using Rng = std::mt19937_64;

inline std::size_t pick(Rng& rng, std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); }

inline std::string random_string(Rng& rng, std::string_view alphabet, std::size_t min_len, std::size_t max_len) {
    const std::size_t len = min_len + pick(rng, max_len - min_len + 1);
    std::string s;
    for (std::size_t i = 0; i < len; ++i) s.push_back(alphabet[pick(rng, alphabet.size())]);
    return s;
}

inline const std::vector<std::pair<std::string, std::string>>& label_pairs() {
    static const std::vector<std::pair<std::string, std::string>> pairs{
        {"pos", "neg"}, {"yes", "no"}, {"good", "bad"}, {"true", "false"}, {"hi", "lo"},
        {"on", "off"},  {"up", "down"}, {"odd", "even"}, {"red", "blue"},  {"cat", "dog"}};
    return pairs;
}

inline const std::vector<std::string>& lexicon() {
    static const std::vector<std::string> words{
        "sun", "rain", "joy", "mud", "gold", "rot", "kind", "mean", "warm", "cold", "calm", "rage",
        "win", "lose", "neat", "mess", "glad", "sad",  "nice", "vile", "fun", "dull", "rich", "poor",
        "tree", "box", "lamp", "road", "cup", "fish",  "door", "hat",  "pen", "map", "sky", "leaf"};
    return words;
}

/// Draws examples from `draw` until each class (or the generation pool) has enough unique inputs.
template <class Draw>
std::vector<Example> unique_examples(Rng& rng, std::set<std::string>& used, std::size_t count,
                                     std::optional<std::string> wanted_output, Draw&& draw) {
    std::vector<Example> out;
    std::size_t attempts = 0;
    while (out.size() < count) {
        require(++attempts < 200000, "task generator could not find enough distinct inputs");
        Example ex = draw(rng);
        if (wanted_output && ex.output != *wanted_output) continue;
        if (!used.insert(ex.input).second) continue;
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace detail

/// One deterministic task instance of `family` parameterized by `seed`.
inline TaskDataset generate_task(TaskFamily family, std::uint64_t seed, const FewShotSizes& sizes = {}) {
    detail::Rng rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(family) + 1);
    TaskDataset task;
    task.name = std::string(to_string(family)) + "_" + std::to_string(seed);
    std::function<Example(detail::Rng&)> draw;

    auto choose_labels = [&] {
        auto pair = detail::label_pairs()[detail::pick(rng, detail::label_pairs().size())];
        if (detail::pick(rng, 2) == 1) std::swap(pair.first, pair.second);
        task.labels = {pair.first, pair.second};
    };

    switch (family) {
        case TaskFamily::KeywordSentiment: {
            choose_labels();
            auto words = detail::lexicon();
            std::shuffle(words.begin(), words.end(), rng);
            const std::vector<std::string> pos(words.begin(), words.begin() + 4);
            const std::vector<std::string> neg(words.begin() + 4, words.begin() + 8);
            const std::vector<std::string> filler(words.begin() + 8, words.end());
            draw = [=, labels = task.labels](detail::Rng& r) {
                const bool positive = detail::pick(r, 2) == 0;
                std::vector<std::string> parts{filler[detail::pick(r, filler.size())],
                                               filler[detail::pick(r, filler.size())]};
                const auto& keys = positive ? pos : neg;
                parts.insert(parts.begin() + static_cast<long>(detail::pick(r, 3)), keys[detail::pick(r, keys.size())]);
                return Example{"kw: " + parts[0] + " " + parts[1] + " " + parts[2], positive ? labels[0] : labels[1]};
            };
            break;
        }
        case TaskFamily::CharParity: {
            choose_labels();
            const std::string alphabet = detail::random_string(rng, "abcdefgh", 3, 3);
            const char target = alphabet[detail::pick(rng, alphabet.size())];
            draw = [=, labels = task.labels](detail::Rng& r) {
                const std::string s = detail::random_string(r, alphabet, 3, 8);
                const auto n = std::count(s.begin(), s.end(), target);
                return Example{std::string("par ") + target + ": " + s, n % 2 == 0 ? labels[0] : labels[1]};
            };
            break;
        }
        case TaskFamily::VowelBucket: {
            choose_labels();
            const std::size_t threshold = 1 + detail::pick(rng, 3);
            draw = [=, labels = task.labels](detail::Rng& r) {
                const std::string s = detail::random_string(r, "abcdefghijklmnopqrstuvwxyz", 4, 10);
                const auto vowels = std::count_if(s.begin(), s.end(), [](char c) {
                    return std::string_view("aeiou").find(c) != std::string_view::npos;
                });
                return Example{"vow: " + s, static_cast<std::size_t>(vowels) <= threshold ? labels[0] : labels[1]};
            };
            break;
        }
        case TaskFamily::Copy: {
            const std::string alphabet = detail::random_string(rng, "abcdefghijklmnopqrstuvwxyz", 8, 8) + " ";
            const std::size_t max_len = 6 + detail::pick(rng, 5);
            draw = [=](detail::Rng& r) {
                std::string s = detail::random_string(r, alphabet, 3, max_len);
                s.front() = alphabet[detail::pick(r, alphabet.size() - 1)];
                s.back() = alphabet[detail::pick(r, alphabet.size() - 1)];
                return Example{"cp: " + s, s};
            };
            break;
        }
        case TaskFamily::Reverse: {
            const std::string alphabet = detail::random_string(rng, "abcdefghijklmnopqrstuvwxyz", 8, 8);
            const std::size_t max_len = 5 + detail::pick(rng, 4);
            draw = [=](detail::Rng& r) {
                const std::string s = detail::random_string(r, alphabet, 3, max_len);
                return Example{"rev: " + s, std::string(s.rbegin(), s.rend())};
            };
            break;
        }
        case TaskFamily::CaseFlip: {
            const std::string lower = detail::random_string(rng, "abcdefghijklmnopqrstuvwxyz", 6, 6);
            std::string alphabet = lower;
            for (char c : lower) alphabet.push_back(static_cast<char>(c - 'a' + 'A'));
            const std::size_t max_len = 5 + detail::pick(rng, 4);
            draw = [=](detail::Rng& r) {
                const std::string s = detail::random_string(r, alphabet, 3, max_len);
                std::string flipped = s;
                for (char& c : flipped) c = (c >= 'a' && c <= 'z') ? static_cast<char>(c - 'a' + 'A')
                                                                   : static_cast<char>(c - 'A' + 'a');
                return Example{"cf: " + s, flipped};
            };
            break;
        }
        case TaskFamily::MarkerExtraction: {
            const char marker = "012345"[detail::pick(rng, 6)];
            const std::string alphabet = detail::random_string(rng, "abcdefghijklmnopqrstuvwxyz", 10, 10);
            draw = [=](detail::Rng& r) {
                std::vector<std::string> words;
                for (int i = 0; i < 3; ++i) words.push_back(detail::random_string(r, alphabet, 2, 4));
                const std::size_t k = detail::pick(r, 3);
                const std::string answer = words[k];
                words[k] = std::string(1, marker) + words[k];
                return Example{"ext: " + words[0] + " " + words[1] + " " + words[2], answer};
            };
            break;
        }
    }

    std::set<std::string> used;
    auto fill = [&](std::size_t per_class, std::size_t total) {
        std::vector<Example> out;
        if (task.task_type == TaskType::Classification) {
            for (const auto& label : task.labels) {
                auto part = detail::unique_examples(rng, used, per_class, label, draw);
                out.insert(out.end(), part.begin(), part.end());
            }
        } else {
            out = detail::unique_examples(rng, used, total, std::nullopt, draw);
        }
        std::shuffle(out.begin(), out.end(), rng);
        return out;
    };
    task.task_type = task.labels.empty() ? TaskType::Generation : TaskType::Classification;
    const std::size_t n_labels = std::max<std::size_t>(task.labels.size(), 1);
    task.train = fill(sizes.shots_per_class, sizes.shots);
    task.dev = fill(sizes.dev / n_labels, sizes.dev);
    task.test = fill(sizes.test / n_labels, sizes.test);
    validate_task(task, sizes);
    return task;
}

inline TaskDataset generate_task(std::string_view family, std::uint64_t seed, const FewShotSizes& sizes = {}) {
    return generate_task(task_family_from_string(family), seed, sizes);
}

// ---------------------------------------------------------------------------
// Suites and splits

struct TaskSplit {
    std::vector<std::string> train_tasks;
    std::vector<std::string> dev_tasks;
    std::vector<std::string> test_tasks;
};

struct SplitFractions {
    double train = 24.0 / 36.0;
    double dev = 4.0 / 36.0;
    double test = 8.0 / 36.0;
};

/// Shuffles task names and cuts them by rounded fractions; the test split takes the remainder.
inline TaskSplit random_task_split(std::vector<std::string> tasks, const SplitFractions& f, std::uint64_t seed) {
    detail::require_input(!tasks.empty(), "random_task_split: empty task list");
    detail::require_input(f.train >= 0 && f.dev >= 0 && f.test >= 0 && std::abs(f.train + f.dev + f.test - 1.0) < 1e-9,
                          "random_task_split: fractions must be non-negative and sum to 1");
    std::mt19937_64 rng(seed);
    std::shuffle(tasks.begin(), tasks.end(), rng);
    const double n = static_cast<double>(tasks.size());
    const auto n_train = std::min(tasks.size(), static_cast<std::size_t>(std::llround(n * f.train)));
    const auto n_dev = std::min(tasks.size() - n_train, static_cast<std::size_t>(std::llround(n * f.dev)));
    TaskSplit split;
    split.train_tasks.assign(tasks.begin(), tasks.begin() + static_cast<long>(n_train));
    split.dev_tasks.assign(tasks.begin() + static_cast<long>(n_train),
                           tasks.begin() + static_cast<long>(n_train + n_dev));
    split.test_tasks.assign(tasks.begin() + static_cast<long>(n_train + n_dev), tasks.end());
    return split;
}

struct SuiteConfig {
    std::size_t n_tasks = 36;
    std::uint64_t seed = 1;
    SplitFractions fractions;
};

struct TaskSuite {
    std::map<std::string, TaskDataset> tasks;
    TaskSplit split;

    std::vector<TaskDataset> select(const std::vector<std::string>& names) const {
        std::vector<TaskDataset> out;
        for (const auto& n : names) {
            auto it = tasks.find(n);
            detail::require_input(it != tasks.end(), "task '" + n + "' is not in the suite");
            out.push_back(it->second);
        }
        return out;
    }
    std::vector<TaskDataset> train() const { return select(split.train_tasks); }
    std::vector<TaskDataset> dev() const { return select(split.dev_tasks); }
    std::vector<TaskDataset> test() const { return select(split.test_tasks); }
};

/// Round-robin over the generator families, each instance with its own seed.
inline TaskSuite generate_suite(const SuiteConfig& cfg) {
    detail::require_input(cfg.n_tasks > 0, "suite must contain at least one task");
    TaskSuite suite;
    std::vector<std::string> names;
    for (std::size_t i = 0; i < cfg.n_tasks; ++i) {
        const auto family = kAllTaskFamilies[i % kAllTaskFamilies.size()];
        auto task = generate_task(family, cfg.seed * 1000 + i);
        names.push_back(task.name);
        suite.tasks.emplace(task.name, std::move(task));
    }
    suite.split = random_task_split(names, cfg.fractions, cfg.seed);
    return suite;
}

// ---------------------------------------------------------------------------
// Disk format

namespace detail {

inline std::vector<Example> read_jsonl(const std::filesystem::path& file) {
    std::ifstream is(file);
    require_input(static_cast<bool>(is), "missing task file " + file.string());
    std::vector<Example> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = file.string() + ":" + std::to_string(lineno) + ": ";
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw InputError(where + "malformed JSON record (" + e.what() + ")");
        }
        require_input(j.is_object() && j.contains("input") && j.contains("output") && j["input"].is_string() &&
                          j["output"].is_string(),
                      where + "record must be an object with string fields \"input\" and \"output\"");
        out.push_back({j["input"].get<std::string>(), j["output"].get<std::string>()});
    }
    return out;
}

inline void write_jsonl(const std::filesystem::path& file, const std::vector<Example>& examples) {
    std::ofstream os(file, std::ios::trunc);
    require_input(static_cast<bool>(os), "cannot write " + file.string());
    for (const auto& ex : examples) os << nlohmann::json{{"input", ex.input}, {"output", ex.output}}.dump() << "\n";
}

}  // namespace detail

inline void save_task_dir(const TaskDataset& task, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    detail::write_jsonl(dir / "train.jsonl", task.train);
    detail::write_jsonl(dir / "dev.jsonl", task.dev);
    detail::write_jsonl(dir / "test.jsonl", task.test);
    std::ofstream os(dir / "meta.json", std::ios::trunc);
    detail::require_input(static_cast<bool>(os), "cannot write " + (dir / "meta.json").string());
    os << nlohmann::json{{"name", task.name}, {"task_type", to_string(task.task_type)}, {"labels", task.labels}}.dump(2)
       << "\n";
}

inline TaskDataset load_task_dir(const std::filesystem::path& dir, const FewShotSizes& sizes = {}) {
    const auto meta_path = dir / "meta.json";
    std::ifstream is(meta_path);
    detail::require_input(static_cast<bool>(is), "missing task file " + meta_path.string());
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw InputError(meta_path.string() + ": malformed JSON (" + e.what() + ")");
    }
    detail::require_input(meta.is_object() && meta.contains("name") && meta["name"].is_string() &&
                              meta.contains("task_type") && meta["task_type"].is_string(),
                          meta_path.string() + ": needs string fields name and task_type");
    TaskDataset task;
    task.name = meta["name"].get<std::string>();
    task.task_type = task_type_from_string(meta["task_type"].get<std::string>());
    if (meta.contains("labels")) {
        detail::require_input(meta["labels"].is_array(), meta_path.string() + ": labels must be an array");
        for (const auto& l : meta["labels"]) {
            detail::require_input(l.is_string(), meta_path.string() + ": labels must be strings");
            task.labels.push_back(l.get<std::string>());
        }
    }
    task.train = detail::read_jsonl(dir / "train.jsonl");
    task.dev = detail::read_jsonl(dir / "dev.jsonl");
    task.test = detail::read_jsonl(dir / "test.jsonl");
    validate_task(task, sizes);
    return task;
}

inline void save_suite(const TaskSuite& suite, const std::filesystem::path& root) {
    for (const auto& [name, task] : suite.tasks) save_task_dir(task, root / name);
    nlohmann::json split{{"train", suite.split.train_tasks},
                         {"dev", suite.split.dev_tasks},
                         {"test", suite.split.test_tasks}};
    std::ofstream os(root / "split.json", std::ios::trunc);
    detail::require_input(static_cast<bool>(os), "cannot write " + (root / "split.json").string());
    os << split.dump(2) << "\n";
}

inline TaskSuite load_suite(const std::filesystem::path& root, const FewShotSizes& sizes = {}) {
    const auto split_path = root / "split.json";
    std::ifstream is(split_path);
    detail::require_input(static_cast<bool>(is), "missing suite split file " + split_path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        throw InputError(split_path.string() + ": malformed JSON (" + e.what() + ")");
    }
    TaskSuite suite;
    auto names = [&](const char* key) {
        detail::require_input(j.contains(key) && j[key].is_array(), split_path.string() + ": missing list " + key);
        return j[key].get<std::vector<std::string>>();
    };
    suite.split = {names("train"), names("dev"), names("test")};
    for (const auto* list : {&suite.split.train_tasks, &suite.split.dev_tasks, &suite.split.test_tasks}) {
        for (const auto& name : *list) {
            auto task = load_task_dir(root / name, sizes);
            detail::require_input(suite.tasks.emplace(name, std::move(task)).second,
                                  split_path.string() + ": task '" + name + "' listed twice");
        }
    }
    return suite;
}

}  // namespace primer
