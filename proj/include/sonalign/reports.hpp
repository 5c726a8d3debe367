#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sonalign/common.hpp"
#include "sonalign/rng.hpp"
#include "sonalign/sha256.hpp"
#include "sonalign/teacher.hpp"

namespace sonalign {

// Synthetic clinical-report generation from structured metadata: a
// deterministic schema-constrained template engine by default, an external
// LLM client as the alternative, and a validator enforcing that no clinical
// finding appears unless the metadata licenses it.

struct MetadataRecord {
    std::string dataset;  // schema tag
    std::vector<std::pair<std::string, std::string>> fields;  // ordered key→value
    std::string subject_id;  // optional
    std::string label;
    std::string modality;  // "respiratory" | "cardiac"

    std::optional<std::string> get(const std::string& key) const {
        for (const auto& [k, v] : fields)
            if (k == key) return v;
        return std::nullopt;
    }

    void validate() const {
        std::map<std::string, int> seen;
        for (const auto& [k, v] : fields) {
            if (v.empty()) throw Error("metadata value for '" + k + "' is empty");
            if (++seen[k] > 1) throw Error("duplicate metadata key '" + k + "'");
        }
    }

    std::string rendered() const {
        std::string out;
        for (const auto& [k, v] : fields) {
            if (!out.empty()) out += "; ";
            out += k + ": " + v;
        }
        return out;
    }

    std::string digest() const { return sha256_hex(dataset + "|" + rendered() + "|" + label); }
};

enum class Specialist { Pulmonologist, Cardiologist };

inline Specialist specialist_from_name(const std::string& name) {
    if (name == "pulmonologist") return Specialist::Pulmonologist;
    if (name == "cardiologist") return Specialist::Cardiologist;
    throw ConfigError("unknown specialist: " + name);
}

// The generation prompt sent to an external model. Specialist and modality
// fill the two slots; metadata is appended as "Key: Value; ...".
inline std::string build_prompt(const MetadataRecord& meta, Specialist specialist) {
    meta.validate();
    if (meta.fields.empty()) throw Error("cannot build a prompt from empty metadata");
    const bool cardiac = specialist == Specialist::Cardiologist;
    const std::string who = cardiac ? "Cardiologist" : "Pulmonologist";
    const std::string modality = cardiac ? "cardiac" : "respiratory";
    std::string p;
    p += "You are a " + who + " tasked with interpreting " + modality +
         " auscultation findings. Based on the given conditions, write 2--3 lines report covering all "
         "clinically relevant information. Only use the information given to write about conditions. "
         "Please do NOT mention anything about further evaluation or characterization.\n\n";
    p += "Your output should be JSON of the following format: {'report': ...}\n\n";
    p += "Conditions: " + meta.rendered();
    return p;
}

// ---- lexicon + validator ----

struct LexiconEntry {
    std::string term;  // lowercase, singular
    std::string key;   // metadata key that licenses it
    std::vector<std::string> positive_values;  // values under which the term may appear bare
};

using Lexicon = std::vector<LexiconEntry>;

inline const Lexicon& default_lexicon() {
    static const Lexicon lex = {
        {"wheeze", "Wheezes", {"Yes"}},
        {"wheezing", "Wheezes", {"Yes"}},
        {"crackle", "Crackles", {"Yes"}},
        {"murmur", "Murmur", {"Present"}},
        {"rhonchi", "Rhonchi", {"Yes"}},
        {"pneumonia", "Diagnosis", {"Pneumonia"}},
        {"copd", "Diagnosis", {"COPD"}},
        {"bronchiectasis", "Diagnosis", {"Bronchiectasis"}},
        {"urti", "Diagnosis", {"URTI"}},
        {"covid", "Status", {"COVID-19"}},
        {"fever", "Fever_Muscle_Pain", {"True"}},
        {"holosystolic", "Timing", {"Holosystolic"}},
        {"systolic", "Timing", {"Systolic", "Holosystolic"}},
        {"diastolic", "Timing", {"Diastolic"}},
        {"harsh", "Quality", {"Harsh"}},
        {"abnormal", "Outcome", {"Abnormal"}},
    };
    return lex;
}

inline const std::vector<std::string>& negation_cues() {
    static const std::vector<std::string> cues = {"no", "not", "without", "absent", "denies", "negative"};
    return cues;
}

struct Violation {
    std::string term;
    std::string reason;
};

struct ValidationResult {
    bool ok = true;
    std::vector<Violation> violations;
};

namespace detail {

inline std::string singular(const std::string& token) {
    if (token.size() > 3 && token.back() == 's' && token[token.size() - 2] != 's')
        return token.substr(0, token.size() - 1);
    return token;
}

}  // namespace detail

// Every lexicon term in the report must be licensed by the metadata. Terms
// whose field is negated (or missing) may appear only inside negation scope:
// within 4 tokens after a negation cue.
inline ValidationResult validate_report(const std::string& report, const MetadataRecord& meta,
                                        const Lexicon& lexicon = default_lexicon()) {
    ValidationResult res;
    auto tokens = detail::word_tokens(report);
    for (size_t i = 0; i < tokens.size(); ++i) {
        const std::string tok = detail::singular(tokens[i]);
        for (const auto& entry : lexicon) {
            if (tok != entry.term) continue;
            auto v = meta.get(entry.key);
            const bool licensed =
                v && std::find(entry.positive_values.begin(), entry.positive_values.end(), *v) !=
                         entry.positive_values.end();
            if (licensed) continue;
            // negated or unlicensed: require a negation cue in the previous 4 tokens
            bool negated = false;
            for (size_t back = 1; back <= 4 && back <= i; ++back) {
                const std::string& prev = tokens[i - back];
                for (const auto& cue : negation_cues())
                    if (prev == cue) negated = true;
            }
            if (!negated) {
                res.ok = false;
                std::string why = v ? ("field " + entry.key + "=" + *v + " does not license it")
                                    : ("metadata has no field " + entry.key);
                res.violations.push_back({entry.term, why + " and no negation cue precedes it"});
            }
        }
    }
    return res;
}

// ---- schema registry for the template engine ----

struct FindingSpec {
    std::string key;
    std::vector<std::string> positive_values;
    std::vector<std::string> present_phrases;  // seeded variants
    std::vector<std::string> absent_phrases;   // seeded variants, each negation-scoped
};

struct SchemaDef {
    std::string name;
    std::string modality;  // "respiratory" | "cardiac"
    Specialist specialist = Specialist::Pulmonologist;
    std::string exam_noun;       // "Respiratory auscultation" etc.
    std::string normal_phrase;   // used when no finding is positive
    std::vector<FindingSpec> findings;
    std::string age_key;
    std::string sex_key;
    std::string diagnosis_key;
    std::vector<std::string> context_keys;  // restated in a context clause
    std::vector<std::string> unremarkable_phrases;  // second sentence when nothing is negated
};

inline const std::map<std::string, SchemaDef>& schema_registry() {
    static const std::map<std::string, SchemaDef> reg = [] {
        std::map<std::string, SchemaDef> r;

        SchemaDef icbhi;
        icbhi.name = "icbhi";
        icbhi.modality = "respiratory";
        icbhi.specialist = Specialist::Pulmonologist;
        icbhi.exam_noun = "Auscultation";
        icbhi.normal_phrase = "clear breath sounds";
        icbhi.findings = {
            {"Wheezes", {"Yes"}, {"wheezes", "audible wheezes"}, {"no wheezes", "no audible wheezes"}},
            {"Crackles", {"Yes"}, {"crackles", "coarse crackles"}, {"no crackles", "no audible crackles"}},
        };
        icbhi.age_key = "Age";
        icbhi.sex_key = "Sex";
        icbhi.diagnosis_key = "Diagnosis";
        icbhi.context_keys = {"Chest_Location"};
        r[icbhi.name] = icbhi;

        SchemaDef cough;
        cough.name = "cough-symptom";
        cough.modality = "respiratory";
        cough.specialist = Specialist::Pulmonologist;
        cough.exam_noun = "Respiratory examination";
        cough.normal_phrase = "unremarkable breath sounds";
        cough.findings = {
            {"Respiratory_Condition", {"True"},
             {"a reported respiratory condition", "an underlying respiratory condition"},
             {"no reported respiratory condition", "no known respiratory condition"}},
            {"Fever_Muscle_Pain", {"True"},
             {"fever or muscle pain", "associated fever"},
             {"no fever or muscle pain", "no reported fever"}},
        };
        cough.age_key = "Age";
        cough.sex_key = "Gender";
        cough.diagnosis_key = "Status";
        r[cough.name] = cough;

        SchemaDef murmur;
        murmur.name = "heart-murmur";
        murmur.modality = "cardiac";
        murmur.specialist = Specialist::Cardiologist;
        murmur.exam_noun = "Cardiac auscultation";
        murmur.normal_phrase = "normal heart sounds";
        murmur.findings = {
            {"Murmur", {"Present"}, {"a murmur", "an audible murmur"}, {"no murmur", "no audible murmur"}},
        };
        murmur.diagnosis_key = "Outcome";
        murmur.context_keys = {"Timing", "Grading", "Pitch", "Quality", "Most_Audible_Location"};
        murmur.unremarkable_phrases = {"No murmurs, rubs, or gallops are appreciated.",
                                       "The rhythm is regular without audible murmurs."};
        r[murmur.name] = murmur;

        SchemaDef cardiac;
        cardiac.name = "normal-cardiac";
        cardiac.modality = "cardiac";
        cardiac.specialist = Specialist::Cardiologist;
        cardiac.exam_noun = "Cardiac auscultation";
        cardiac.normal_phrase = "normal heart sounds with a regular rhythm";
        cardiac.findings = {
            {"Murmur", {"Present"}, {"a murmur"}, {"no audible murmur", "no murmur"}},
        };
        cardiac.diagnosis_key = "Diagnosis";
        cardiac.context_keys = {"Data_Type"};
        cardiac.unremarkable_phrases = {"No murmurs, rubs, or gallops are appreciated.",
                                        "The rhythm is regular without audible murmurs."};
        r[cardiac.name] = cardiac;

        // the synthetic corpus schema used by the data generator
        SchemaDef synth;
        synth.name = "synthetic-ausc";
        synth.modality = "respiratory";
        synth.specialist = Specialist::Pulmonologist;
        synth.exam_noun = "Auscultation";
        synth.normal_phrase = "clear breath sounds and a regular rhythm";
        synth.findings = {
            {"Wheezes", {"Yes"}, {"wheezes", "continuous wheezes"}, {"no wheezes", "no audible wheezes"}},
            {"Crackles", {"Yes"}, {"crackles", "scattered crackles"}, {"no crackles", "no audible crackles"}},
            {"Murmur", {"Present"}, {"a murmur", "an audible murmur"}, {"no murmur", "no audible murmur"}},
        };
        synth.age_key = "Age";
        synth.sex_key = "Sex";
        r[synth.name] = synth;
        return r;
    }();
    return reg;
}

inline const SchemaDef& schema_for(const std::string& dataset) {
    auto it = schema_registry().find(dataset);
    if (it == schema_registry().end()) throw ConfigError("no registered report schema for dataset '" + dataset + "'");
    return it->second;
}

// ---- template generation ----

struct ClinicalRecord {
    std::string report;
    std::string source;  // "template" | "llm"
    std::string metadata_digest;
    uint64_t seed = 0;
    bool validator_flagged = false;

    nlohmann::json to_json() const { return nlohmann::json{{"report", report}}; }
};

namespace detail {

inline const std::string& pick(const std::vector<std::string>& options, Rng& rng) {
    return options[static_cast<size_t>(rng.next_below(options.size()))];
}

inline std::string join_clauses(const std::vector<std::string>& parts, const std::string& last_sep = " and ") {
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i > 0) out += (i + 1 == parts.size()) ? last_sep : ", ";
        out += parts[i];
    }
    return out;
}

inline std::string sex_word(const std::string& v) {
    if (v == "M" || v == "Male" || v == "male") return "male";
    if (v == "F" || v == "Female" || v == "female") return "female";
    return v;
}

inline std::string age_text(const std::string& v) {
    // render "66.0" as "66"
    auto dot = v.find('.');
    return dot == std::string::npos ? v : v.substr(0, dot);
}

inline std::string pretty_key(const std::string& key) {
    std::string out;
    for (char c : key) out += (c == '_') ? ' ' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

inline std::string diagnosis_text(const std::string& dx) {
    std::string lo;
    for (char c : dx) lo += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (lo == "normal" || lo == "healthy") return "a " + lo + " examination";
    if (lo == "abnormal") return "an abnormal examination";
    return lo;
}

}  // namespace detail

// 2–3 period-terminated sentences assembled from slot-filled clauses:
// positive findings, explicit negations for absent findings, a demographic
// clause, and an optional impression sentence. Seeded synonym choice gives
// surface diversity; output always passes validate_report by construction.
inline ClinicalRecord generate_template_report(const MetadataRecord& meta, uint64_t seed) {
    meta.validate();
    const SchemaDef& schema = schema_for(meta.dataset);
    Rng rng(Rng::derive(seed, 0x5e9f));

    std::vector<std::string> present, absent;
    for (const auto& f : schema.findings) {
        auto v = meta.get(f.key);
        if (!v) continue;
        const bool pos = std::find(f.positive_values.begin(), f.positive_values.end(), *v) !=
                         f.positive_values.end();
        if (pos)
            present.push_back(detail::pick(f.present_phrases, rng));
        else
            absent.push_back(detail::pick(f.absent_phrases, rng));
    }

    std::string demo;
    if (!schema.age_key.empty() && !schema.sex_key.empty()) {
        auto age = meta.get(schema.age_key);
        auto sex = meta.get(schema.sex_key);
        if (age && sex)
            demo = " in this " + detail::age_text(*age) + "-year-old " + detail::sex_word(*sex) + " subject";
    }

    const std::string reveal = detail::pick({"reveals", "demonstrates", "identifies"}, rng);
    std::string s1 = schema.exam_noun + " " + reveal + " " +
                     (present.empty() ? schema.normal_phrase : detail::join_clauses(present)) + demo + ".";

    std::string s2;
    if (!absent.empty()) {
        s2 = detail::pick({"The recording shows ", "The exam otherwise shows ", "There are otherwise "}, rng) +
             detail::join_clauses(absent, " and ") + ".";
    } else if (!schema.unremarkable_phrases.empty()) {
        s2 = detail::pick(schema.unremarkable_phrases, rng);
    } else {
        s2 = detail::pick({"No adventitious sounds are appreciated elsewhere.",
                           "The remainder of the recording is unremarkable."},
                          rng);
    }

    std::string s3;
    std::vector<std::string> context;
    for (const auto& key : schema.context_keys) {
        auto v = meta.get(key);
        if (v) context.push_back(detail::pretty_key(key) + " " + *v);
    }
    std::optional<std::string> dx;
    if (!schema.diagnosis_key.empty()) dx = meta.get(schema.diagnosis_key);
    if (dx) {
        s3 = detail::pick({"Findings are consistent with ", "The overall picture is consistent with "}, rng) +
             detail::diagnosis_text(*dx) +
             (context.empty() ? "" : " (" + detail::join_clauses(context, ", ") + ")") + ".";
    } else if (!context.empty()) {
        s3 = "Recorded with " + detail::join_clauses(context, ", ") + ".";
    }

    ClinicalRecord rec;
    rec.report = s1 + " " + s2 + (s3.empty() ? "" : " " + s3);
    rec.source = "template";
    rec.metadata_digest = meta.digest();
    rec.seed = seed;
    auto check = validate_report(rec.report, meta);
    if (!check.ok)
        throw Error("template generator produced a validator violation for dataset '" + meta.dataset +
                    "': " + check.violations[0].term + " (" + check.violations[0].reason + ")");
    return rec;
}

inline size_t sentence_count(const std::string& report) {
    size_t n = 0;
    for (char c : report)
        if (c == '.') ++n;
    return n;
}

// ---- external generation via the shared remote-client machinery ----

struct LlmReportError : RemoteError {
    using RemoteError::RemoteError;
};

// Sends the prompt, expects a JSON object with the single key "report".
// Retries transport and parse failures up to max_retries; a response that
// parses but fails validation is kept and flagged.
inline ClinicalRecord generate_llm_report(const MetadataRecord& meta, const RemoteTransport& transport,
                                          int max_retries = 2, const Lexicon& lexicon = default_lexicon()) {
    const SchemaDef& schema = schema_for(meta.dataset);
    const std::string prompt = build_prompt(meta, schema.specialist);
    std::string last_error;
    for (int attempt = 0; attempt <= max_retries; ++attempt) {
        std::string body;
        try {
            nlohmann::json req{{"prompt", prompt}};
            body = transport(req.dump());
        } catch (const RemoteError& e) {
            last_error = std::string("transport: ") + e.what();
            continue;
        }
        nlohmann::json resp;
        try {
            resp = nlohmann::json::parse(body);
        } catch (const nlohmann::json::exception& e) {
            last_error = std::string("parse: ") + e.what();
            continue;
        }
        if (!resp.is_object() || !resp.contains("report") || !resp["report"].is_string()) {
            last_error = "parse: response missing string key 'report'";
            continue;
        }
        ClinicalRecord rec;
        rec.report = resp["report"].get<std::string>();
        rec.source = "llm";
        rec.metadata_digest = meta.digest();
        rec.validator_flagged = !validate_report(rec.report, meta, lexicon).ok;
        return rec;
    }
    throw LlmReportError("report generation failed after " + std::to_string(max_retries + 1) +
                         " attempts; last error: " + last_error);
}

}  // namespace sonalign
