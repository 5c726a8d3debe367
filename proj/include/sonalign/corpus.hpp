#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "sonalign/dsp.hpp"
#include "sonalign/logmel.hpp"
#include "sonalign/reports.hpp"
#include "sonalign/rng.hpp"
#include "sonalign/wav.hpp"

namespace sonalign {

// Paired-corpus manifest: JSON lines, one clip per line.

struct ManifestEntry {
    std::string audio_id;
    std::string spectrogram_path;
    std::string wav_path;  // optional
    std::string report;
    std::string label;
    std::string subject_id;  // optional
    std::string dataset;
};

inline nlohmann::json manifest_entry_json(const ManifestEntry& e) {
    nlohmann::json j{{"audio_id", e.audio_id},
                     {"spectrogram_path", e.spectrogram_path},
                     {"report", e.report},
                     {"label", e.label},
                     {"dataset", e.dataset}};
    if (!e.subject_id.empty()) j["subject_id"] = e.subject_id;
    if (!e.wav_path.empty()) j["wav_path"] = e.wav_path;
    return j;
}

inline void save_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    for (const auto& e : entries) f << manifest_entry_json(e).dump() << "\n";
    if (!f) throw IoError("write failed: " + path);
}

inline std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::vector<ManifestEntry> out;
    std::string line;
    size_t lineno = 0;
    std::set<std::string> ids;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path + ":" + std::to_string(lineno) + ": bad manifest line: " + e.what());
        }
        ManifestEntry e;
        e.audio_id = j.at("audio_id").get<std::string>();
        e.spectrogram_path = j.at("spectrogram_path").get<std::string>();
        e.report = j.at("report").get<std::string>();
        e.label = j.at("label").get<std::string>();
        e.dataset = j.at("dataset").get<std::string>();
        if (j.contains("subject_id")) e.subject_id = j["subject_id"].get<std::string>();
        if (j.contains("wav_path")) e.wav_path = j["wav_path"].get<std::string>();
        if (!ids.insert(e.audio_id).second)
            throw FormatError(path + ": duplicate audio_id '" + e.audio_id + "'");
        out.push_back(std::move(e));
    }
    return out;
}

// Link generated records to an audio index; every record must reference an
// existing spectrogram file id.
inline std::vector<ManifestEntry> export_corpus(
    const std::vector<std::pair<std::string, ClinicalRecord>>& records,  // (audio_id, record)
    const std::map<std::string, ManifestEntry>& audio_index) {
    std::vector<ManifestEntry> out;
    for (const auto& [audio_id, rec] : records) {
        auto it = audio_index.find(audio_id);
        if (it == audio_index.end()) throw Error("dangling audio reference: '" + audio_id + "'");
        ManifestEntry e = it->second;
        e.report = rec.report;
        out.push_back(std::move(e));
    }
    return out;
}

// ---- synthetic paired-corpus generator ----

// Four auscultation-like classes built from band-limited noise plus periodic
// transients, with per-subject pitch offsets so subject identity is audible.
// The same class signal drives both the waveform and the report text.

struct SyntheticConfig {
    size_t classes = 4;  // drawn from the class table below (max 4)
    size_t subjects = 40;
    size_t clips = 2000;
    double seconds = 1.0;
    int sample_rate = 16000;
    uint64_t seed = 0;
    double test_fraction = 0.2;  // subject-disjoint split
    bool write_wavs = true;
};

struct SyntheticClassSpec {
    std::string name;
    std::string wheezes;   // "Yes"/"No"
    std::string crackles;
    std::string murmur;    // "Present"/"Absent"
};

inline const std::vector<SyntheticClassSpec>& synthetic_classes() {
    static const std::vector<SyntheticClassSpec> classes = {
        {"normal", "No", "No", "Absent"},
        {"wheezes", "Yes", "No", "Absent"},
        {"crackles", "No", "Yes", "Absent"},
        {"murmur", "No", "No", "Present"},
    };
    return classes;
}

namespace detail {

// low-passed white noise via a one-pole smoother, then peak-scaled
inline std::vector<double> breath_noise(size_t n, double smooth, double level, Rng& rng) {
    std::vector<double> out(n);
    double state = 0.0;
    for (size_t i = 0; i < n; ++i) {
        state = smooth * state + (1.0 - smooth) * rng.uniform(-1.0, 1.0);
        out[i] = state;
    }
    double peak = 1e-12;
    for (double v : out) peak = std::max(peak, std::abs(v));
    for (double& v : out) v *= level / peak;
    return out;
}

}  // namespace detail

// Class-dependent clip synthesis. Subject pitch multiplier shifts the tonal
// content and class components sit close to the noise bed, so classes overlap
// heavily across subjects: the probing task stays well below ceiling for an
// untrained encoder and leaves headroom for alignment to matter.
inline Waveform synthesize_clip(size_t class_id, double subject_pitch, const SyntheticConfig& cfg, Rng& rng) {
    const auto n = static_cast<size_t>(cfg.seconds * cfg.sample_rate);
    const double sr = cfg.sample_rate;
    Waveform w;
    w.sample_rate = cfg.sample_rate;
    w.samples.assign(n, 0.0);

    // shared bed: breathy noise with a slow respiratory envelope, level
    // varies per clip
    const double bed_level = 0.3 + 0.25 * rng.next_double();
    auto bed = detail::breath_noise(n, 0.90 + 0.06 * rng.next_double(), bed_level, rng);
    const double breath_hz = 0.9 + 0.3 * rng.next_double();
    for (size_t i = 0; i < n; ++i) {
        double env = 0.65 + 0.35 * std::sin(2.0 * M_PI * breath_hz * static_cast<double>(i) / sr);
        w.samples[i] = bed[i] * env;
    }

    // every class occasionally carries faint off-class transients so single
    // cues are not perfectly diagnostic
    auto add_clicks = [&](double amp, double rate, double ring_hz) {
        size_t i = static_cast<size_t>(rng.next_double() * sr / rate);
        const double decay = 1.0 / (0.002 * sr);
        while (i < n) {
            const double a = amp * (0.7 + 0.6 * rng.next_double());
            for (size_t k = 0; k < static_cast<size_t>(0.008 * sr) && i + k < n; ++k) {
                double t = static_cast<double>(k);
                w.samples[i + k] += a * std::exp(-t * decay) * std::sin(2.0 * M_PI * ring_hz * t / sr);
            }
            i += static_cast<size_t>((0.6 + 0.8 * rng.next_double()) * sr / rate);
        }
    };

    switch (class_id) {
        case 0:  // normal: bed plus rare soft clicks
            if (rng.next_double() < 0.3) add_clicks(0.04, 3.0, 1500.0 * subject_pitch);
            break;
        case 1: {  // wheezes: faint narrowband tone with vibrato
            const double f0 = (320.0 + 240.0 * rng.next_double()) * subject_pitch;
            const double vib = 4.0 + 2.0 * rng.next_double();
            const double amp = 0.10 + 0.07 * rng.next_double();
            double phase = rng.next_double() * 2.0 * M_PI;
            for (size_t i = 0; i < n; ++i) {
                double t = static_cast<double>(i) / sr;
                double f = f0 * (1.0 + 0.03 * std::sin(2.0 * M_PI * vib * t));
                phase += 2.0 * M_PI * f / sr;
                w.samples[i] += amp * std::sin(phase) * (0.7 + 0.3 * std::sin(2.0 * M_PI * breath_hz * t));
            }
            break;
        }
        case 2: {  // crackles: sparse damped clicks just above the bed
            add_clicks(0.16 + 0.10 * rng.next_double(), 8.0 + 6.0 * rng.next_double(),
                       (1400.0 + 900.0 * rng.next_double()) * subject_pitch);
            break;
        }
        case 3: {  // murmur: low-band noise bursts at a cardiac-like period
            const double beat_hz = (1.1 + 0.4 * rng.next_double()) * subject_pitch;
            auto rumble = detail::breath_noise(n, 0.985, 0.30 + 0.15 * rng.next_double(), rng);
            for (size_t i = 0; i < n; ++i) {
                double t = static_cast<double>(i) / sr;
                double cyc = t * beat_hz - std::floor(t * beat_hz);
                double burst = (cyc < 0.35) ? std::sin(M_PI * cyc / 0.35) : 0.0;
                w.samples[i] += rumble[i] * burst;
            }
            break;
        }
        default:
            throw ConfigError("synthetic corpus supports at most 4 classes");
    }

    // sensor noise, then normalize away gross level differences
    for (size_t i = 0; i < n; ++i) w.samples[i] += 0.015 * rng.uniform(-1.0, 1.0);
    double peak = 1e-12;
    for (double v : w.samples) peak = std::max(peak, std::abs(v));
    const double target = 0.5 + 0.2 * rng.next_double();
    for (double& v : w.samples) v *= target / peak;
    return w;
}

inline MetadataRecord synthetic_metadata(size_t class_id, const std::string& subject_id, uint64_t subject_seed) {
    const auto& cls = synthetic_classes()[class_id];
    Rng rng(Rng::derive(subject_seed, 0xa9e));
    MetadataRecord m;
    m.dataset = "synthetic-ausc";
    m.modality = "respiratory";
    m.subject_id = subject_id;
    m.label = cls.name;
    m.fields = {
        {"Wheezes", cls.wheezes},
        {"Crackles", cls.crackles},
        {"Murmur", cls.murmur},
        {"Age", std::to_string(20 + rng.next_below(60))},
        {"Sex", rng.next_below(2) ? "M" : "F"},
    };
    return m;
}

struct SyntheticCorpus {
    std::vector<ManifestEntry> all;
    std::vector<ManifestEntry> train;
    std::vector<ManifestEntry> test;
};

// Fully seed-deterministic corpus: waveforms, spectrograms, metadata,
// template reports, and a subject-disjoint train/test split.
inline SyntheticCorpus generate_synthetic_corpus(const SyntheticConfig& cfg, const std::string& out_dir) {
    if (cfg.classes < 2 || cfg.classes > synthetic_classes().size())
        throw ConfigError("synthetic corpus: classes must be in [2," +
                          std::to_string(synthetic_classes().size()) + "]");
    if (cfg.subjects < 2) throw ConfigError("synthetic corpus: need at least 2 subjects");
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "spec");
    if (cfg.write_wavs) fs::create_directories(fs::path(out_dir) / "wav");

    // subject roster: class fixed per subject, pitch offset per subject
    std::vector<size_t> subject_class(cfg.subjects);
    std::vector<double> subject_pitch(cfg.subjects);
    for (size_t s = 0; s < cfg.subjects; ++s) {
        subject_class[s] = s % cfg.classes;
        Rng srng(Rng::derive(cfg.seed, 0x51b + s));
        subject_pitch[s] = 0.85 + 0.3 * srng.next_double();
    }

    SyntheticCorpus corpus;
    LogmelConfig lcfg;
    lcfg.sample_rate = cfg.sample_rate;
    for (size_t i = 0; i < cfg.clips; ++i) {
        const size_t subject = i % cfg.subjects;
        const size_t cls = subject_class[subject];
        const std::string sid = "s" + std::to_string(subject);
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "clip%05zu", i);
        const std::string id = idbuf;

        Rng clip_rng(Rng::derive(cfg.seed, 0xc11b0 + i));
        Waveform w = synthesize_clip(cls, subject_pitch[subject], cfg, clip_rng);
        Spectrogram spec = logmel(w, lcfg);

        ManifestEntry e;
        e.audio_id = id;
        e.dataset = "synthetic-ausc";
        e.subject_id = sid;
        e.spectrogram_path = (fs::path(out_dir) / "spec" / (id + ".acspec")).string();
        save_spectrogram(e.spectrogram_path, spec);
        if (cfg.write_wavs) {
            e.wav_path = (fs::path(out_dir) / "wav" / (id + ".wav")).string();
            save_wav_pcm16(e.wav_path, w);
        }

        MetadataRecord meta = synthetic_metadata(cls, sid, Rng::derive(cfg.seed, 0x5d + subject));
        ClinicalRecord rec = generate_template_report(meta, Rng::derive(cfg.seed, 0x4e90 + i));
        e.report = rec.report;
        e.label = meta.label;
        corpus.all.push_back(std::move(e));
    }

    // subject-disjoint split: the last ceil(test_fraction · subjects) of each
    // class's subject list go to test
    std::set<size_t> test_subjects;
    {
        std::map<size_t, std::vector<size_t>> by_class;
        for (size_t s = 0; s < cfg.subjects; ++s) by_class[subject_class[s]].push_back(s);
        for (auto& [c, subs] : by_class) {
            auto n_test = static_cast<size_t>(std::ceil(cfg.test_fraction * static_cast<double>(subs.size())));
            n_test = std::min(n_test, subs.size() - 1);
            for (size_t k = subs.size() - n_test; k < subs.size(); ++k) test_subjects.insert(subs[k]);
        }
    }
    for (const auto& e : corpus.all) {
        size_t s = std::stoul(e.subject_id.substr(1));
        (test_subjects.count(s) ? corpus.test : corpus.train).push_back(e);
    }

    save_manifest((fs::path(out_dir) / "corpus.jsonl").string(), corpus.all);
    save_manifest((fs::path(out_dir) / "corpus_train.jsonl").string(), corpus.train);
    save_manifest((fs::path(out_dir) / "corpus_test.jsonl").string(), corpus.test);
    return corpus;
}

}  // namespace sonalign
