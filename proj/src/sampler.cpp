#include "chbr/sampler.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>

#include "chbr/util.hpp"

namespace chbr {

using nlohmann::json;

namespace {

constexpr std::string_view generation_system_prompt =
    "You are a visual concept proposer tasked with enhancing text descriptions for zero-shot image "
    "classification on the test dataset using CLIP.\n"
    "Given:\n"
    "A core class from the test dataset. The set of other classes in the dataset.\n"
    "Task:\n"
    "Propose a concise, visually discriminative concept to append to the text description (i.e., \"A photo "
    "of {Core Class} with {your concept}\") that helps CLIP better distinguish the core class from the other "
    "classes.\n"
    "Guidelines:\n"
    "Analyze the unique visual characteristics of the core class compared to other classes.\n"
    "Propose a concept that captures these discriminative visual features.\n"
    "Ensure the concept is concrete, easily understandable by CLIP, and specific to the test dataset.\n"
    "Please remember the proposed concept should enable CLIP to classify images of the core class more "
    "accurately while minimizing confusion with other classes in the zero-shot setting.";

constexpr std::string_view discriminative_system_prompt =
    "Please answer which class the concept belongs to. Just output the most possible class without external "
    "output.";

constexpr std::string_view batch_verdict_system_prompt =
    "Please determine which class in image_object_classes the concept in the Python list "
    "image_object_concepts belongs to. Output a Python dict named predicted_dict where key is the concept and "
    "value is the predicted class, wrapped with triple backticks (```).";

constexpr std::string_view final_concept_prefix = "the final concept is:";

constexpr std::string_view concept_reask =
    "Your reply did not end with the concept. Please restate it so that the last line starts with \"The "
    "final concept is: \".";

constexpr std::string_view verdict_reask =
    "Your reply could not be read. Please output only the Python dict named predicted_dict wrapped with "
    "triple backticks (```).";

std::string join_names(const std::vector<ClassLabel>& labels) {
    std::string out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (i) out += ", ";
        out += labels[i].display_name;
    }
    return out;
}

std::string python_str(std::string_view s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\\' || c == '\'') out += '\\';
        out += c;
    }
    return out + "'";
}

template <typename Range, typename Proj>
std::string python_list(const Range& items, Proj proj) {
    std::string out = "[";
    bool first = true;
    for (const auto& it : items) {
        if (!first) out += ", ";
        first = false;
        out += python_str(proj(it));
    }
    return out + "]";
}

std::string ascii_lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::string_view to_string(SamplerMode m) { return m == SamplerMode::standard ? "standard" : "efficient"; }

std::string excerpt(std::string_view s, std::size_t limit = 120) {
    std::string out(s.substr(0, limit));
    if (s.size() > limit) out += "...";
    return out;
}

}  // namespace

void validate(const SamplerConfig& config, std::size_t num_classes) {
    require(num_classes >= 2, "sampling needs at least two classes");
    require(config.window_size >= 1, "window_size H must be >= 1");
    require(config.window_size <= num_classes - 1,
            "window_size H=" + std::to_string(config.window_size) + " exceeds K-1=" + std::to_string(num_classes - 1));
    require(config.samples_per_class >= 1, "samples_per_class M must be >= 1");
    require(config.verifications >= 1, "verifications Z must be >= 1");
    require(config.efficient_batch >= 1, "efficient_batch must be >= 1");
    validate(config.llm);
}

json to_json(const SamplerConfig& c) {
    return {{"window_size", c.window_size},
            {"samples_per_class", c.samples_per_class},
            {"verifications", c.verifications},
            {"seed", c.seed},
            {"mode", to_string(c.mode)},
            {"efficient_batch", c.efficient_batch},
            {"llm", to_json(c.llm)}};
}

SamplerConfig sampler_config_from_json(const json& j) {
    try {
        SamplerConfig c;
        c.window_size = j.value("window_size", c.window_size);
        c.samples_per_class = j.value("samples_per_class", c.samples_per_class);
        c.verifications = j.value("verifications", c.verifications);
        c.seed = j.value("seed", c.seed);
        const auto mode = j.value("mode", std::string("standard"));
        if (mode == "standard") {
            c.mode = SamplerMode::standard;
        } else if (mode == "efficient") {
            c.mode = SamplerMode::efficient;
        } else {
            throw Error(ErrorKind::precondition, "unknown sampler mode '" + mode + "'");
        }
        c.efficient_batch = j.value("efficient_batch", c.efficient_batch);
        if (j.contains("llm")) c.llm = llm_endpoint_config_from_json(j.at("llm"));
        return c;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::precondition, std::string("malformed sampler config: ") + e.what());
    }
}

ChatRequest concept_generation_request(const ClassLabel& target, const std::vector<ClassLabel>& others,
                                       double temperature, std::size_t n) {
    require(!others.empty(), "concept generation needs at least one other class");
    ChatRequest r;
    r.temperature = temperature;
    r.n = n;
    r.messages.push_back({"system", std::string(generation_system_prompt)});
    r.messages.push_back({"user", "Core class: " + target.display_name + ". Other classes: " + join_names(others) +
                                      ".  Please remember to present the concept with \"The final concept is: \" "
                                      "as a prefix in the last line."});
    return r;
}

ChatRequest discriminative_request(std::string_view concept_text, const std::vector<ClassLabel>& options,
                                   double temperature) {
    ChatRequest r;
    r.temperature = temperature;
    r.messages.push_back({"system", std::string(discriminative_system_prompt)});
    r.messages.push_back({"user", "Concept: " + std::string(concept_text) + ". Classes: " + join_names(options) + "."});
    return r;
}

ChatRequest batch_verdict_request(const std::vector<std::string>& concept_texts,
                                  const std::vector<ClassLabel>& options, double temperature) {
    ChatRequest r;
    r.temperature = temperature;
    r.messages.push_back({"system", std::string(batch_verdict_system_prompt)});
    r.messages.push_back(
        {"user", "image_object_concepts= " + python_list(concept_texts, [](const std::string& s) { return s; }) +
                     ". image_object_classes=: " +
                     python_list(options, [](const ClassLabel& c) { return c.display_name; }) + "."});
    return r;
}

std::vector<ClassLabel> draw_candidate_set(const std::vector<ClassLabel>& classes, std::size_t target,
                                           std::size_t window_size, std::mt19937_64& rng) {
    require(target < classes.size(), "target class index out of range");
    require(classes.size() >= 1 && window_size <= classes.size() - 1,
            "cannot draw H=" + std::to_string(window_size) + " candidates from K-1=" +
                std::to_string(classes.size() - 1) + " other classes");
    std::vector<std::size_t> pool;
    pool.reserve(classes.size() - 1);
    for (std::size_t i = 0; i < classes.size(); ++i)
        if (i != target) pool.push_back(i);
    std::vector<ClassLabel> out;
    out.reserve(window_size);
    for (std::size_t k = 0; k < window_size; ++k) {
        const auto pick = k + static_cast<std::size_t>(uniform_index(rng, pool.size() - k));
        std::swap(pool[k], pool[pick]);
        out.push_back(classes[pool[k]]);
    }
    return out;
}

namespace {

bool strip_suffix(std::string& s, std::string_view suffix) {
    if (s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0) {
        s.erase(s.size() - suffix.size());
        return true;
    }
    return false;
}

bool strip_prefix(std::string& s, std::string_view prefix) {
    if (s.compare(0, prefix.size(), prefix) == 0) {
        s.erase(0, prefix.size());
        return true;
    }
    return false;
}

std::string clean_concept(std::string s) {
    for (std::string before; before != s;) {
        before = s;
        s = trim(s);
        while (!s.empty() && (s.front() == '*' || s.front() == '`')) s.erase(0, 1);
        while (!s.empty() && (s.back() == '*' || s.back() == '`')) s.pop_back();
        s = trim(s);
        if (!s.empty() && s.back() == '.') s.pop_back();
        for (auto [open, close] : {std::pair<std::string_view, std::string_view>{"\"", "\""},
                                   {"'", "'"},
                                   {"\xE2\x80\x9C", "\xE2\x80\x9D"},
                                   {"\xE2\x80\x98", "\xE2\x80\x99"}}) {
            if (s.size() >= open.size() + close.size() && s.compare(0, open.size(), open) == 0 &&
                s.compare(s.size() - close.size(), close.size(), close) == 0) {
                strip_prefix(s, open);
                strip_suffix(s, close);
                break;
            }
        }
    }
    return s;
}

std::vector<std::string_view> split_lines(std::string_view s) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start <= s.size()) {
        auto end = s.find('\n', start);
        if (end == std::string_view::npos) end = s.size();
        auto line = s.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        lines.push_back(line);
        start = end + 1;
    }
    return lines;
}

}  // namespace

std::string parse_final_concept(std::string_view reply) {
    const auto lines = split_lines(reply);
    for (std::size_t k = lines.size(); k-- > 0;) {
        const auto lower = ascii_lower(lines[k]);
        const auto pos = lower.find(final_concept_prefix);
        if (pos == std::string::npos) continue;
        std::string cpt = clean_concept(std::string(lines[k].substr(pos + final_concept_prefix.size())));
        // "The final concept is:" on its own line, concept on the next one.
        for (std::size_t next = k + 1; cpt.empty() && next < lines.size(); ++next)
            cpt = clean_concept(std::string(lines[next]));
        if (!cpt.empty()) return cpt;
        throw ConceptParseError("final-concept line has no concept text", std::string(reply));
    }
    throw ConceptParseError("reply lacks a line with \"The final concept is:\": " + excerpt(reply),
                            std::string(reply));
}

std::string normalize_answer(std::string_view text) {
    std::string out;
    bool space = true;
    for (unsigned char c : text) {
        if (c < 0x80 && (std::isspace(c) || std::ispunct(c))) {
            if (!space) out += ' ';
            space = true;
        } else {
            out += static_cast<char>(c < 0x80 ? std::tolower(c) : c);
            space = false;
        }
    }
    if (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

std::optional<ClassLabel> match_answer(std::string_view raw_answer, const std::vector<ClassLabel>& options) {
    require(!options.empty(), "match_answer needs at least one option");
    const auto answer = normalize_answer(raw_answer);
    if (answer.empty()) return std::nullopt;
    std::vector<std::size_t> exact, contained;
    const auto padded = " " + answer + " ";
    for (std::size_t i = 0; i < options.size(); ++i) {
        const auto name = normalize_answer(options[i].display_name);
        if (name.empty()) continue;
        if (name == answer) exact.push_back(i);
        if (padded.find(" " + name + " ") != std::string::npos) contained.push_back(i);
    }
    if (exact.size() == 1) return options[exact.front()];
    if (exact.empty() && contained.size() == 1) return options[contained.front()];
    return std::nullopt;
}

double importance_weight(double success_rate) {
    require(success_rate >= 0.0 && success_rate <= 1.0,
            "success rate " + std::to_string(success_rate) + " outside [0, 1]");
    constexpr double proposal_density = 1.0;
    return success_rate / proposal_density;
}

namespace {

class DictParser {
   public:
    explicit DictParser(std::string_view src) : src_(src) {}

    std::map<std::string, std::string> parse() {
        skip_ws();
        if (peek_identifier() == "predicted_dict") {
            pos_ += std::string_view("predicted_dict").size();
            skip_ws();
            if (!eat('=')) fail("expected '=' after predicted_dict");
            skip_ws();
        }
        if (!eat('{')) fail("expected '{'");
        std::map<std::string, std::string> out;
        skip_ws();
        while (!eat('}')) {
            auto key = string_literal();
            skip_ws();
            if (!eat(':')) fail("expected ':' after key");
            skip_ws();
            auto value = string_literal();
            out[std::move(key)] = std::move(value);
            skip_ws();
            if (eat(',')) {
                skip_ws();
                continue;
            }
            skip_ws();
            if (!eat('}')) fail("expected ',' or '}'");
            break;
        }
        skip_ws();
        eat(';');
        skip_ws();
        if (pos_ != src_.size()) fail("unexpected text after dict");
        return out;
    }

   private:
    [[noreturn]] void fail(const std::string& why) const {
        throw Error(ErrorKind::parse, "batch verdict " + why + " near '" + excerpt(src_.substr(std::min(pos_, src_.size())), 40) +
                                          "' in block '" + excerpt(src_, 80) + "'");
    }
    void skip_ws() {
        while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) ++pos_;
    }
    bool eat(char c) {
        if (pos_ < src_.size() && src_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }
    std::string_view peek_identifier() const {
        auto end = pos_;
        while (end < src_.size() && (std::isalnum(static_cast<unsigned char>(src_[end])) || src_[end] == '_')) ++end;
        return src_.substr(pos_, end - pos_);
    }
    std::string string_literal() {
        if (pos_ >= src_.size() || (src_[pos_] != '"' && src_[pos_] != '\'')) fail("expected a quoted string");
        const char quote = src_[pos_++];
        std::string out;
        while (true) {
            if (pos_ >= src_.size()) fail("unterminated string");
            char c = src_[pos_++];
            if (c == quote) break;
            if (c == '\n') fail("newline inside string");
            if (c == '\\') {
                if (pos_ >= src_.size()) fail("dangling escape");
                c = src_[pos_++];
                if (c == 'n') c = '\n';
                else if (c == 't') c = '\t';
            }
            out += c;
        }
        return out;
    }

    std::string_view src_;
    std::size_t pos_ = 0;
};

}  // namespace

std::map<std::string, std::string> parse_batch_verdicts(std::string_view reply) {
    constexpr std::string_view fence = "```";
    const auto open = reply.find(fence);
    if (open == std::string_view::npos)
        throw Error(ErrorKind::parse, "batch verdict reply has no ``` fenced block: '" + excerpt(reply) + "'");
    const auto body_start = open + fence.size();
    const auto close = reply.find(fence, body_start);
    if (close == std::string_view::npos)
        throw Error(ErrorKind::parse, "batch verdict fenced block is not closed: '" + excerpt(reply) + "'");
    std::string_view block = reply.substr(body_start, close - body_start);
    // Optional language tag such as ```python.
    const auto nl = block.find('\n');
    if (nl != std::string_view::npos) {
        const auto first = block.substr(0, nl);
        const bool tag = !first.empty() && std::all_of(first.begin(), first.end(), [](char c) {
            return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '+';
        });
        if (tag && first != "predicted_dict") block.remove_prefix(nl + 1);
    }
    return DictParser(block).parse();
}

SamplerSession::SamplerSession(ChatClient& client, const SamplerConfig& config) : client_(client), config_(config) {}

std::vector<std::string> SamplerSession::ask(const ChatRequest& request, bool verification) {
    ++(verification ? verification_ : generation_);
    std::size_t retries = 0;
    try {
        const json reply = with_retries(
            config_.llm.retry_policy(), [&] { return json(client_.complete(request)); }, &retries);
        retries_ += retries;
        return reply.get<std::vector<std::string>>();
    } catch (...) {
        retries_ += retries;
        throw;
    }
}

SamplerDiagnostics SamplerSession::diagnostics() const {
    SamplerDiagnostics d;
    d.generation_queries = generation_;
    d.verification_queries = verification_;
    d.retries = retries_;
    d.reasks = reasks_;
    return d;
}

namespace {

ChatRequest with_followup(ChatRequest request, const std::string& previous_reply, std::string_view followup) {
    request.messages.push_back({"assistant", previous_reply});
    request.messages.push_back({"user", std::string(followup)});
    request.tag += "/reask";
    request.n = 1;
    return request;
}

std::string first_reply(const std::vector<std::string>& replies) {
    if (replies.empty()) throw Error(ErrorKind::provider, "LLM returned no completion");
    return replies.front();
}

}  // namespace

Concept generate_concept(SamplerSession& session, const ClassLabel& target, const std::vector<ClassLabel>& candidates,
                         std::size_t sample_index, std::string_view tag) {
    ChatRequest req = concept_generation_request(target, candidates, session.config().llm.decode_temperature);
    req.tag = std::string(tag);
    const std::string reply = first_reply(session.ask(req, false));
    Concept cpt{{}, target.id, sample_index};
    try {
        cpt.text = parse_final_concept(reply);
    } catch (const ConceptParseError&) {
        session.note_reask();
        const std::string second = first_reply(session.ask(with_followup(req, reply, concept_reask), false));
        try {
            cpt.text = parse_final_concept(second);
        } catch (const ConceptParseError& e) {
            throw ConceptParseError("concept for class '" + target.id + "' sample " + std::to_string(sample_index) +
                                        " unparseable after re-ask: " + e.what(),
                                    second);
        }
    }
    validate(cpt);
    return cpt;
}

TestOutcome discriminative_test(SamplerSession& session, const Concept& cpt, const std::vector<ClassLabel>& classes,
                                std::size_t target, std::size_t window_size, std::size_t verifications,
                                std::uint64_t cell_seed, std::string_view tag) {
    require(verifications >= 1, "verifications Z must be >= 1");
    TestOutcome out;
    out.trials = verifications;
    for (std::size_t z = 0; z < verifications; ++z) {
        std::mt19937_64 rng(derive_seed(cell_seed, "trial", {z}));
        DiscriminativeTrial trial;
        trial.concept_text = cpt.text;
        trial.target_class_id = classes[target].id;
        auto options = draw_candidate_set(classes, target, window_size, rng);
        for (const auto& d : options) trial.distractor_class_ids.push_back(d.id);
        options.push_back(classes[target]);
        portable_shuffle(options, rng);
        for (const auto& o : options) trial.option_class_ids.push_back(o.id);

        ChatRequest req = discriminative_request(cpt.text, options, session.config().llm.verify_temperature);
        req.tag = std::string(tag) + "/" + std::to_string(z);
        trial.raw_answer = first_reply(session.ask(req, true));
        const auto matched = match_answer(trial.raw_answer, options);
        trial.verdict = matched && matched->id == classes[target].id ? Verdict::pass : Verdict::fail;
        if (trial.verdict == Verdict::pass) ++out.passes;
        out.details.push_back(std::move(trial));
    }
    out.success_rate = static_cast<double>(out.passes) / static_cast<double>(out.trials);
    return out;
}

namespace {

using CellKey = std::pair<std::string, std::size_t>;

/// JSON-lines checkpoint: a meta line, then one record per completed cell.
class Checkpoint {
   public:
    Checkpoint(const std::optional<std::string>& path, const json& meta) : path_(path) {
        if (!path_) return;
        bool have_meta = false;
        if (std::filesystem::exists(*path_)) {
            std::ifstream in(*path_);
            std::string line;
            while (std::getline(in, line)) {
                if (trim(line).empty()) continue;
                json rec;
                try {
                    rec = json::parse(line);
                } catch (const json::parse_error&) {
                    break;  // torn final line from an interrupted write
                }
                if (rec.contains("meta")) {
                    if (rec.at("meta") != meta)
                        throw Error(ErrorKind::precondition,
                                    "checkpoint '" + *path_ + "' was written with a different sampler configuration");
                    have_meta = true;
                    continue;
                }
                done_[{rec.at("class_id").get<std::string>(), rec.at("sample_index").get<std::size_t>()}] = rec;
            }
        }
        out_.open(*path_, std::ios::app);
        if (!out_) throw Error(ErrorKind::precondition, "cannot open checkpoint '" + *path_ + "'");
        if (!have_meta) {
            out_ << json{{"meta", meta}}.dump() << '\n';
            out_.flush();
        }
    }

    const json* find(const std::string& class_id, std::size_t sample_index) const {
        auto it = done_.find({class_id, sample_index});
        return it == done_.end() ? nullptr : &it->second;
    }

    void append(const json& record) {
        if (!path_) return;
        std::lock_guard lock(mutex_);
        out_ << record.dump() << '\n';
        out_.flush();
    }

   private:
    std::optional<std::string> path_;
    std::map<CellKey, json> done_;
    std::ofstream out_;
    std::mutex mutex_;
};

json checkpoint_meta(const std::vector<ClassLabel>& classes, const SamplerConfig& config) {
    std::vector<std::string> ids;
    for (const auto& c : classes) ids.push_back(c.id);
    return {{"classes", ids},
            {"seed", config.seed},
            {"window_size", config.window_size},
            {"samples_per_class", config.samples_per_class},
            {"verifications", config.verifications},
            {"mode", to_string(config.mode)},
            {"efficient_batch", config.efficient_batch}};
}

json cell_record(const WeightedConcept& wc, const std::vector<DiscriminativeTrial>& trials) {
    json verdicts = json::array(), answers = json::array();
    for (const auto& t : trials) {
        verdicts.push_back(t.verdict == Verdict::pass ? "pass" : "fail");
        answers.push_back(t.raw_answer);
    }
    return {{"class_id", wc.item.class_id},
            {"sample_index", wc.item.sample_index},
            {"concept", wc.item.text},
            {"passes", wc.passes},
            {"trials", wc.trials},
            {"success_rate", wc.success_rate},
            {"verdicts", verdicts},
            {"raw_answers", answers}};
}

WeightedConcept weighted_from_record(const json& rec) {
    WeightedConcept wc;
    wc.item.text = rec.at("concept").get<std::string>();
    wc.item.class_id = rec.at("class_id").get<std::string>();
    wc.item.sample_index = rec.at("sample_index").get<std::size_t>();
    wc.passes = rec.at("passes").get<std::size_t>();
    wc.trials = rec.at("trials").get<std::size_t>();
    wc.success_rate = static_cast<double>(wc.passes) / static_cast<double>(wc.trials);
    wc.importance_weight = importance_weight(wc.success_rate);
    return wc;
}

WeightedConcept weighted(Concept cpt, std::size_t passes, std::size_t trials) {
    WeightedConcept wc;
    wc.item = std::move(cpt);
    wc.passes = passes;
    wc.trials = trials;
    wc.success_rate = static_cast<double>(passes) / static_cast<double>(trials);
    wc.importance_weight = importance_weight(wc.success_rate);
    return wc;
}

ConceptBank assemble(const std::vector<ClassLabel>& classes, const SamplerConfig& config,
                     std::vector<std::vector<WeightedConcept>> cells, const SampleOptions& options) {
    ConceptBank bank;
    bank.task_name = options.task_name;
    bank.classes = classes;
    bank.concepts = std::move(cells);
    json cfg = to_json(config);
    bank.sampler_meta = {{"config", cfg}, {"created_at", sampler_timestamp()}};
    validate(bank);
    return bank;
}

}  // namespace

ConceptBank sample_concept_bank(const std::vector<ClassLabel>& classes, const SamplerConfig& config,
                                ChatClient& client, const SampleOptions& options, SamplerDiagnostics* diagnostics) {
    validate_class_set(classes);
    validate(config, classes.size());
    const std::size_t K = classes.size(), M = config.samples_per_class;
    Checkpoint checkpoint(options.checkpoint_path, checkpoint_meta(classes, config));
    SamplerSession session(client, config);

    std::vector<std::vector<WeightedConcept>> cells(K, std::vector<WeightedConcept>(M));
    std::atomic<std::size_t> resumed{0};
    parallel_for(K * M, config.llm.max_in_flight, [&](std::size_t cell) {
        const std::size_t i = cell / M, j = cell % M;
        if (const json* rec = checkpoint.find(classes[i].id, j)) {
            cells[i][j] = weighted_from_record(*rec);
            ++resumed;
            return;
        }
        const std::uint64_t cell_seed = derive_seed(config.seed, "sampler", {i, j});
        std::mt19937_64 rng(derive_seed(cell_seed, "candidates"));
        const auto candidates = draw_candidate_set(classes, i, config.window_size, rng);
        const std::string tag = classes[i].id + "/" + std::to_string(j);
        Concept cpt = generate_concept(session, classes[i], candidates, j, "gen/" + tag);
        const auto outcome = discriminative_test(session, cpt, classes, i, config.window_size,
                                                 config.verifications, cell_seed, "disc/" + tag);
        cells[i][j] = weighted(std::move(cpt), outcome.passes, outcome.trials);
        checkpoint.append(cell_record(cells[i][j], outcome.details));
    });

    if (diagnostics) {
        *diagnostics = session.diagnostics();
        diagnostics->resumed_cells = resumed;
    }
    return assemble(classes, config, std::move(cells), options);
}

std::size_t nearest_class(const std::vector<ClassLabel>& classes, const EmbeddingStore& text_store, std::size_t target) {
    auto lookup = [&](const ClassLabel& c) {
        if (auto idx = text_store.find(c.display_name)) return text_store.row(*idx);
        if (auto idx = text_store.find(content_id(c.display_name))) return text_store.row(*idx);
        throw Error(ErrorKind::lookup, "text store has no embedding for class name '" + c.display_name + "'");
    };
    const auto anchor = lookup(classes[target]);
    std::optional<std::size_t> best;
    double best_sim = 0.0;
    for (std::size_t k = 0; k < classes.size(); ++k) {
        if (k == target) continue;
        const double sim = cosine_similarity(anchor, lookup(classes[k]));
        if (!best || sim > best_sim) {
            best = k;
            best_sim = sim;
        }
    }
    require(best.has_value(), "nearest_class needs at least two classes");
    return *best;
}

namespace {

std::string verdict_for(const std::map<std::string, std::string>& verdicts, const std::string& cpt) {
    if (auto it = verdicts.find(cpt); it != verdicts.end()) return it->second;
    const auto want = normalize_answer(cpt);
    for (const auto& [k, v] : verdicts)
        if (normalize_answer(k) == want) return v;
    return {};
}

}  // namespace

ConceptBank efficient_sample_concept_bank(const std::vector<ClassLabel>& classes, const EmbeddingStore& text_store,
                                          const SamplerConfig& config, ChatClient& client,
                                          const SampleOptions& options, SamplerDiagnostics* diagnostics) {
    validate_class_set(classes);
    validate(config, classes.size());
    const std::size_t K = classes.size(), M = config.samples_per_class, B = config.efficient_batch;
    const std::size_t batches = (M + B - 1) / B;
    Checkpoint checkpoint(options.checkpoint_path, checkpoint_meta(classes, config));
    SamplerSession session(client, config);

    std::vector<std::size_t> nearest(K);
    for (std::size_t i = 0; i < K; ++i) nearest[i] = nearest_class(classes, text_store, i);

    std::vector<std::vector<WeightedConcept>> cells(K, std::vector<WeightedConcept>(M));
    std::atomic<std::size_t> resumed{0};
    parallel_for(K * batches, config.llm.max_in_flight, [&](std::size_t job) {
        const std::size_t i = job / batches, b = job % batches;
        const std::size_t first = b * B, count = std::min(B, M - first);

        bool complete = true;
        for (std::size_t k = 0; k < count; ++k) complete = complete && checkpoint.find(classes[i].id, first + k);
        if (complete) {
            for (std::size_t k = 0; k < count; ++k)
                cells[i][first + k] = weighted_from_record(*checkpoint.find(classes[i].id, first + k));
            resumed += count;
            return;
        }

        const ClassLabel& target = classes[i];
        const std::vector<ClassLabel> others{classes[nearest[i]]};
        const std::string tag = target.id + "/b" + std::to_string(b);

        // Generation: `count` sampled completions per call, topped up until full.
        std::vector<std::string> texts;
        int barren_rounds = 0;
        for (std::size_t round = 0; texts.size() < count; ++round) {
            ChatRequest req =
                concept_generation_request(target, others, config.llm.decode_temperature, count - texts.size());
            req.tag = "gen/" + tag + (round ? "/r" + std::to_string(round) : "");
            const auto replies = session.ask(req, false);
            std::size_t parsed = 0;
            std::string last_raw;
            for (const auto& reply : replies) {
                if (texts.size() == count) break;
                try {
                    texts.push_back(parse_final_concept(reply));
                    ++parsed;
                } catch (const ConceptParseError&) {
                    last_raw = reply;
                }
            }
            if (parsed < replies.size()) session.note_reask();
            if (parsed == 0 && ++barren_rounds >= 2)
                throw ConceptParseError("no parseable concept for class '" + target.id + "' batch " +
                                            std::to_string(b) + " after re-ask",
                                        last_raw);
        }

        // Verification: one batched query per trial.
        const std::uint64_t cell_seed = derive_seed(config.seed, "sampler/efficient", {i, b});
        std::vector<std::size_t> passes(count, 0);
        std::vector<std::vector<DiscriminativeTrial>> trials(count);
        for (std::size_t z = 0; z < config.verifications; ++z) {
            std::mt19937_64 rng(derive_seed(cell_seed, "trial", {z}));
            std::vector<ClassLabel> opts{target, classes[nearest[i]]};
            portable_shuffle(opts, rng);
            ChatRequest req = batch_verdict_request(texts, opts, config.llm.verify_temperature);
            req.tag = "verify/" + tag + "/" + std::to_string(z);
            std::string reply = first_reply(session.ask(req, true));
            std::map<std::string, std::string> verdicts;
            try {
                verdicts = parse_batch_verdicts(reply);
            } catch (const Error&) {
                session.note_reask();
                reply = first_reply(session.ask(with_followup(req, reply, verdict_reask), true));
                try {
                    verdicts = parse_batch_verdicts(reply);
                } catch (const Error& e) {
                    throw Error(ErrorKind::parse, "batch verdicts for class '" + target.id + "' batch " +
                                                      std::to_string(b) + " unparseable after re-ask: " + e.what());
                }
            }
            for (std::size_t k = 0; k < count; ++k) {
                DiscriminativeTrial t;
                t.concept_text = texts[k];
                t.target_class_id = target.id;
                t.distractor_class_ids = {classes[nearest[i]].id};
                for (const auto& o : opts) t.option_class_ids.push_back(o.id);
                t.raw_answer = verdict_for(verdicts, texts[k]);
                const auto matched = match_answer(t.raw_answer, opts);
                t.verdict = matched && matched->id == target.id ? Verdict::pass : Verdict::fail;
                if (t.verdict == Verdict::pass) ++passes[k];
                trials[k].push_back(std::move(t));
            }
        }
        for (std::size_t k = 0; k < count; ++k) {
            Concept cpt{texts[k], target.id, first + k};
            validate(cpt);
            cells[i][first + k] = weighted(std::move(cpt), passes[k], config.verifications);
            checkpoint.append(cell_record(cells[i][first + k], trials[k]));
        }
    });

    if (diagnostics) {
        *diagnostics = session.diagnostics();
        diagnostics->resumed_cells = resumed;
    }
    return assemble(classes, config, std::move(cells), options);
}

std::string sampler_timestamp() {
    std::time_t t = 0;
    if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH"); epoch && *epoch) {
        t = static_cast<std::time_t>(std::strtoll(epoch, nullptr, 10));
    } else {
        t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    }
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace chbr
