// SPDX-License-Identifier: Apache-2.0
#include "motionlm/motion_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace motionlm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {
constexpr Real kTwoPi = 6.283185307179586;

const char* kTaskNames[kNumTasks] = {"T2M",           "M2T",  "I-T2M", "I-M2T", "M2M-predict",
                                     "M2M-inbetween", "I-M2M", "React", "Edit"};
}  // namespace

const char* task_name(Task t) { return kTaskNames[static_cast<int>(t)]; }

Task task_from_name(const std::string& name) {
    for (int i = 0; i < kNumTasks; ++i)
        if (name == kTaskNames[i]) return static_cast<Task>(i);
    throw ConfigError("unknown task tag: " + name);
}

bool task_is_interactive(Task t) {
    return t == Task::IT2M || t == Task::IM2T || t == Task::IM2M || t == Task::React;
}

bool task_is_motion_to_motion(Task t) {
    return t == Task::M2MPredict || t == Task::M2MInbetween || t == Task::IM2M ||
           t == Task::React || t == Task::Edit;
}

// ---------------------------------------------------------------------------
// Text grammar

namespace {
const std::vector<std::string> kAmpWords = {"small", "medium", "large"};
const std::vector<std::string> kFreqWords = {"slow", "steady", "fast"};
const std::vector<std::string> kPhaseWords = {"p0", "p1", "p2", "p3"};
const std::vector<std::string> kDirWords = {"x", "y", "diagonal"};
const std::vector<std::string> kRelWords = {"mirrors", "follows"};
const std::vector<std::string> kEditWords = {"larger", "smaller", "reversed"};
}  // namespace

TextGrammar::TextGrammar() {
    words_ = {"person", "moves", "with", "amplitude", "at", "speed", "phase", "along",
              "partner", "make", "it"};
    auto append = [&](const std::vector<std::string>& group) {
        words_.insert(words_.end(), group.begin(), group.end());
    };
    append(kAmpWords);
    append(kFreqWords);
    append(kPhaseWords);
    append(kDirWords);
    append(kRelWords);
    append(kEditWords);
}

int TextGrammar::word_id(const std::string& w) const {
    for (size_t i = 0; i < words_.size(); ++i)
        if (words_[i] == w) return static_cast<int>(i);
    throw VocabError("word not in text vocabulary: " + w);
}

std::vector<int> TextGrammar::describe(const MotionBins& bins, int relation) const {
    std::vector<int> out = {word_id("person"),                word_id("moves"),
                            word_id("with"),                  word_id(kAmpWords.at(bins.amp)),
                            word_id("amplitude"),             word_id("at"),
                            word_id(kFreqWords.at(bins.freq)), word_id("speed"),
                            word_id("phase"),                 word_id(kPhaseWords.at(bins.phase)),
                            word_id("along"),                 word_id(kDirWords.at(bins.dir))};
    if (relation >= 0) {
        out.push_back(word_id("partner"));
        out.push_back(word_id(kRelWords.at(relation)));
    }
    return out;
}

std::vector<int> TextGrammar::edit_instruction(EditKind kind) const {
    return {word_id("make"), word_id("it"), word_id(kEditWords.at(static_cast<size_t>(kind)))};
}

namespace {
int find_group(const std::vector<int>& text, const TextGrammar& g,
               const std::vector<std::string>& group) {
    for (int id : text)
        for (size_t k = 0; k < group.size(); ++k)
            if (id == g.word_id(group[k])) return static_cast<int>(k);
    return -1;
}
}  // namespace

MotionBins TextGrammar::parse_bins(const std::vector<int>& text) const {
    MotionBins b;
    b.amp = find_group(text, *this, kAmpWords);
    b.freq = find_group(text, *this, kFreqWords);
    b.phase = find_group(text, *this, kPhaseWords);
    b.dir = find_group(text, *this, kDirWords);
    return b;
}

int TextGrammar::parse_relation(const std::vector<int>& text) const {
    return find_group(text, *this, kRelWords);
}

int TextGrammar::parse_edit(const std::vector<int>& instruction) const {
    return find_group(instruction, *this, kEditWords);
}

std::string TextGrammar::to_string(const std::vector<int>& ids) const {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= size())
            throw VocabError("text id out of range: " + std::to_string(ids[i]));
        if (i) out += ' ';
        out += words_[ids[i]];
    }
    return out;
}

std::vector<int> TextGrammar::tokenize(const std::string& sentence) const {
    std::vector<int> out;
    std::istringstream ss(sentence);
    std::string w;
    while (ss >> w) out.push_back(word_id(w));
    return out;
}

// ---------------------------------------------------------------------------
// Synthesis

namespace {

void dir_vector(int dir, Real* ux, Real* uy) {
    switch (dir) {
        case 0: *ux = 1.0; *uy = 0.0; break;
        case 1: *ux = 0.0; *uy = 1.0; break;
        default: *ux = 0.7071067811865476; *uy = 0.7071067811865476; break;
    }
}

Real joint_scale(int j) { return 1.0 - 0.1 * j; }
Real joint_phase(int j) { return 0.25 * 3.141592653589793 * j; }

void check_spec(const SyntheticSpec& spec) {
    if (spec.amp_bins.empty() || spec.freq_bins.empty() || spec.phase_bins < 1 ||
        spec.directions < 1)
        throw ConfigError("synthetic spec has empty parameter ranges");
    if (spec.frames < 1 || spec.feature_dim < 2 || spec.feature_dim % 2 != 0)
        throw ConfigError("synthetic spec needs frames >= 1 and an even feature_dim >= 2");
    if (spec.tasks.empty()) throw ConfigError("synthetic spec has no tasks");
}

Real sample_in_bin(Rng& rng, std::pair<Real, Real> bin, Real margin) {
    const Real w = bin.second - bin.first;
    return rng.uniform(bin.first + margin * w, bin.second - margin * w);
}

Real phase_bin_lo(const SyntheticSpec& spec, int bin) {
    return kTwoPi * bin / spec.phase_bins;
}

MotionParams sample_params(const SyntheticSpec& spec, Rng& rng) {
    MotionParams p;
    p.bins.amp = rng.uniform_int(0, static_cast<int>(spec.amp_bins.size()) - 1);
    p.bins.freq = rng.uniform_int(0, static_cast<int>(spec.freq_bins.size()) - 1);
    p.bins.phase = rng.uniform_int(0, spec.phase_bins - 1);
    p.bins.dir = rng.uniform_int(0, spec.directions - 1);
    p.amplitude = sample_in_bin(rng, spec.amp_bins[p.bins.amp], spec.bin_margin);
    p.frequency = sample_in_bin(rng, spec.freq_bins[p.bins.freq], spec.bin_margin);
    const Real w = kTwoPi / spec.phase_bins;
    p.phase = phase_bin_lo(spec, p.bins.phase) + spec.bin_margin * w +
              rng.uniform() * w * (1.0 - 2.0 * spec.bin_margin);
    p.direction = p.bins.dir;
    return p;
}

}  // namespace

MotionSequence synthesize_motion(const SyntheticSpec& spec, const MotionParams& p) {
    MotionSequence seq;
    seq.frame_rate = spec.frame_rate;
    const int joints = spec.feature_dim / 2;
    seq.frames.resize(spec.frames, spec.feature_dim);
    Real ux, uy;
    dir_vector(p.direction, &ux, &uy);
    for (int t = 0; t < spec.frames; ++t) {
        const Real time = static_cast<Real>(t) / spec.frame_rate;
        for (int j = 0; j < joints; ++j) {
            const Real s = p.amplitude * joint_scale(j) *
                           std::sin(kTwoPi * p.frequency * time + p.phase + joint_phase(j));
            seq.frames(t, 2 * j) = s * ux;
            seq.frames(t, 2 * j + 1) = s * uy;
        }
    }
    return seq;
}

std::vector<Eigen::VectorXd> jitter_patterns(int feature_dim) {
    // Jitter lives in the subspace orthogonal to every family signal. A
    // sinusoid with joint gains s_j and offsets delta_j spans, per
    // coordinate, the joint profiles s*cos(delta) and s*sin(delta); both
    // patterns are built orthogonal to these (and to each other), so
    // projecting them out of a motion removes the jitter exactly and leaves
    // any family member untouched.
    const int joints = feature_dim / 2;
    Eigen::VectorXd p = Eigen::VectorXd::Zero(feature_dim);
    if (joints < 4) {
        for (int j = 0; j < joints; ++j) {
            p(2 * j) = j % 2 == 0 ? 1.0 : -1.0;
            p(2 * j + 1) = j < joints / 2 ? 1.0 : -1.0;
        }
        return {p};
    }
    Eigen::VectorXd a(joints), b(joints);
    for (int j = 0; j < joints; ++j) {
        a(j) = joint_scale(j) * std::cos(joint_phase(j));
        b(j) = joint_scale(j) * std::sin(joint_phase(j));
    }
    auto orthonormalize = [&](Eigen::VectorXd v, const std::vector<Eigen::VectorXd>& against) {
        for (const auto& u : against) v -= u.dot(v) * u;
        return Eigen::VectorXd(v / v.norm());
    };
    std::vector<Eigen::VectorXd> basis;
    basis.push_back(a / a.norm());
    basis.push_back(orthonormalize(b, basis));
    Eigen::VectorXd seed1 = Eigen::VectorXd::Zero(joints), seed2 = Eigen::VectorXd::Zero(joints);
    seed1(0) = 1.0;
    seed2(1) = 1.0;
    Eigen::VectorXd q1 = orthonormalize(seed1, basis);
    basis.push_back(q1);
    Eigen::VectorXd q2 = orthonormalize(seed2, basis);
    // two feature-orthogonal patterns: (q1 on x, q2 on y) and the swap
    const Real scl = std::sqrt(static_cast<Real>(joints));
    Eigen::VectorXd p2 = Eigen::VectorXd::Zero(feature_dim);
    for (int j = 0; j < joints; ++j) {
        p(2 * j) = q1(j) * scl;
        p(2 * j + 1) = q2(j) * scl;
        p2(2 * j) = q2(j) * scl;
        p2(2 * j + 1) = q1(j) * scl;
    }
    return {p, p2};
}

MotionSequence add_hold_noise(const MotionSequence& seq, Real coarse_std, Real fine_std,
                              Real spike_prob, int hold, Rng& rng) {
    MotionSequence out = seq;
    if (coarse_std <= 0 && fine_std <= 0) return out;
    if (hold < 1) hold = 1;
    const auto patterns = jitter_patterns(seq.feature_dim());
    const Real stds[2] = {coarse_std, fine_std};
    for (int t0 = 0; t0 < out.length(); t0 += hold) {
        if (rng.uniform() >= spike_prob) continue;  // calm window
        for (size_t k = 0; k < patterns.size() && k < 2; ++k) {
            const Real burst = rng.normal(0, stds[k]);
            if (stds[k] <= 0) continue;
            for (int t = t0; t < std::min(out.length(), t0 + hold); ++t)
                out.frames.row(t) += burst * patterns[k].transpose();
        }
    }
    return out;
}

MotionSequence apply_relation(const SyntheticSpec& spec, const MotionSequence& a, Relation rel) {
    MotionSequence b = a;
    if (rel == Relation::Mirrors) {
        for (int c = 1; c < a.feature_dim(); c += 2) b.frames.col(c) = -a.frames.col(c);
    } else {
        const int lag = spec.follow_lag_frames;
        for (int t = 0; t < a.length(); ++t) b.frames.row(t) = a.frames.row(std::max(0, t - lag));
    }
    return b;
}

MotionSequence apply_edit(const MotionSequence& src, EditKind kind) {
    MotionSequence out = src;
    switch (kind) {
        case EditKind::Larger: out.frames *= 2.0; break;
        case EditKind::Smaller: out.frames *= 0.5; break;
        case EditKind::Reversed: out.frames *= -1.0; break;
    }
    return out;
}

MotionBins edited_bins(const MotionBins& src, EditKind kind, const SyntheticSpec& spec) {
    MotionBins out = src;
    switch (kind) {
        case EditKind::Larger:
            out.amp = std::min(src.amp + 1, static_cast<int>(spec.amp_bins.size()) - 1);
            break;
        case EditKind::Smaller:
            out.amp = std::max(src.amp - 1, 0);
            break;
        case EditKind::Reversed:
            // negation shifts the phase by pi, i.e. half the bin circle
            out.phase = (src.phase + spec.phase_bins / 2) % spec.phase_bins;
            break;
    }
    return out;
}

MotionSequence edit_target(const CorpusItem& item) {
    if (item.task != Task::Edit || item.edit_kind < 0)
        throw ConfigError("edit_target: item is not an Edit item");
    return apply_edit(item.motions.at(0), static_cast<EditKind>(item.edit_kind));
}

std::vector<CorpusItem> generate_corpus(const SyntheticSpec& spec, int n_items) {
    check_spec(spec);
    if (n_items < 1) throw ConfigError("generate_corpus: n_items must be >= 1");
    TextGrammar grammar;
    Rng rng(spec.seed);
    std::vector<CorpusItem> items;
    items.reserve(n_items);
    for (int i = 0; i < n_items; ++i) {
        const Task task = spec.tasks[i % spec.tasks.size()];
        MotionParams p = sample_params(spec, rng);
        CorpusItem item;
        item.task = task;
        item.bins = p.bins;
        item.motions.push_back(add_hold_noise(synthesize_motion(spec, p), spec.noise_std,
                                              spec.noise_std_fine, spec.spike_prob,
                                              spec.noise_hold, rng));
        if (task_is_interactive(task)) {
            item.relation = rng.uniform_int(0, 1);
            item.motions.push_back(
                apply_relation(spec, item.motions[0], static_cast<Relation>(item.relation)));
        }
        item.text = grammar.describe(p.bins, item.relation);
        if (task == Task::Edit) {
            // keep the edit representable inside the bin range
            const int kinds[] = {0, 1, 2};
            int kind = kinds[rng.uniform_int(0, 2)];
            if (kind == 0 && p.bins.amp == static_cast<int>(spec.amp_bins.size()) - 1) kind = 1;
            if (kind == 1 && p.bins.amp == 0) kind = 2;
            item.edit_kind = kind;
            item.edit_instruction = grammar.edit_instruction(static_cast<EditKind>(kind));
        }
        items.push_back(std::move(item));
    }
    return items;
}

// ---------------------------------------------------------------------------
// Bin estimation: project out the jitter, find the direction from axis
// energies and cross-correlation, the frequency by fine grid power search,
// then amplitude/phase by least squares at the found frequency.

namespace {

int bin_of(Real v, const std::vector<std::pair<Real, Real>>& bins) {
    for (size_t i = 0; i < bins.size(); ++i)
        if (v < bins[i].second || i + 1 == bins.size()) return static_cast<int>(i);
    return static_cast<int>(bins.size()) - 1;
}

}  // namespace

MotionBins estimate_bins(const MotionSequence& raw, const SyntheticSpec& spec) {
    MotionBins out;
    const int t_len = raw.length();
    const int joints = raw.feature_dim() / 2;
    if (t_len < 2 || joints < 1) return out;

    MotionSequence seq = raw;
    for (const auto& p : jitter_patterns(raw.feature_dim())) {
        const Real p_norm2 = p.squaredNorm();
        for (int t = 0; t < t_len; ++t) {
            const Real coeff = seq.frames.row(t).dot(p.transpose()) / p_norm2;
            seq.frames.row(t) -= coeff * p.transpose();
        }
    }

    // Diagonal motion drives x and y coherently; an axis motion leaves the
    // other axis holding uncorrelated noise. Correlation separates the two
    // even when the noise energy rivals a small signal.
    Real ex = 0, ey = 0, cxy = 0;
    for (int j = 0; j < joints; ++j) {
        ex += seq.frames.col(2 * j).squaredNorm();
        ey += seq.frames.col(2 * j + 1).squaredNorm();
        cxy += seq.frames.col(2 * j).dot(seq.frames.col(2 * j + 1));
    }
    if (ex <= 0 && ey <= 0) return out;
    const Real rho = cxy / std::sqrt(std::max(ex * ey, 1e-12));
    if (rho > 0.5) out.dir = 2;
    else out.dir = ex >= ey ? 0 : 1;

    // Joint-0 trace projected onto the motion direction; unit direction
    // vectors keep the amplitude scale intact.
    Eigen::VectorXd s(t_len);
    for (int t = 0; t < t_len; ++t) {
        if (out.dir == 0) s(t) = seq.frames(t, 0);
        else if (out.dir == 1) s(t) = seq.frames(t, 1);
        else s(t) = (seq.frames(t, 0) + seq.frames(t, 1)) * 0.7071067811865476;
    }

    const Real f_lo = spec.freq_bins.front().first * 0.5;
    const Real f_hi = spec.freq_bins.back().second * 1.2;
    Real best_f = f_lo, best_power = -1;
    for (Real f = f_lo; f <= f_hi; f += 0.01) {
        Real c = 0, d = 0;
        for (int t = 0; t < t_len; ++t) {
            const Real th = kTwoPi * f * t / seq.frame_rate;
            c += s(t) * std::sin(th);
            d += s(t) * std::cos(th);
        }
        const Real power = c * c + d * d;
        if (power > best_power) { best_power = power; best_f = f; }
    }
    out.freq = bin_of(best_f, spec.freq_bins);

    // Least squares s(t) ~ a*sin(th) + b*cos(th); A = |(a,b)|, phi = atan2(b,a).
    Real saa = 0, sbb = 0, sab = 0, sa = 0, sb = 0;
    for (int t = 0; t < t_len; ++t) {
        const Real th = kTwoPi * best_f * t / seq.frame_rate;
        const Real vs = std::sin(th), vc = std::cos(th);
        saa += vs * vs; sbb += vc * vc; sab += vs * vc;
        sa += s(t) * vs; sb += s(t) * vc;
    }
    const Real det = saa * sbb - sab * sab;
    if (std::abs(det) < 1e-9) return out;
    const Real a = (sa * sbb - sb * sab) / det;
    const Real b = (sb * saa - sa * sab) / det;
    const Real amp = std::sqrt(a * a + b * b);
    Real phi = std::atan2(b, a);
    if (phi < 0) phi += kTwoPi;
    out.amp = bin_of(amp, spec.amp_bins);
    out.phase = std::min(static_cast<int>(phi / (kTwoPi / spec.phase_bins)), spec.phase_bins - 1);
    return out;
}

// ---------------------------------------------------------------------------
// File I/O

namespace {

constexpr char kMotionMagic[4] = {'M', 'O', 'T', 'N'};
constexpr uint32_t kMotionVersion = 1;

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f64(std::string& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

struct ByteReader {
    std::string buf;
    size_t pos = 0;
    std::string path;

    void need(size_t n, const char* what) const {
        if (pos + n > buf.size())
            throw ParseError(path + ": truncated reading " + what + " at byte offset " +
                             std::to_string(pos));
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    double f64(const char* what) {
        need(8, what);
        uint64_t bits = 0;
        for (int i = 0; i < 8; ++i)
            bits |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
};

ByteReader open_reader(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ByteReader{ss.str(), 0, path};
}

}  // namespace

void save_motion(const std::string& path, const MotionSequence& seq) {
    std::string out;
    out.append(kMotionMagic, 4);
    put_u32(out, kMotionVersion);
    put_u32(out, static_cast<uint32_t>(seq.length()));
    put_u32(out, static_cast<uint32_t>(seq.feature_dim()));
    put_f64(out, seq.frame_rate);
    for (int t = 0; t < seq.length(); ++t)
        for (int c = 0; c < seq.feature_dim(); ++c) put_f64(out, seq.frames(t, c));
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ParseError("cannot write " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

MotionSequence load_motion(const std::string& path) {
    ByteReader r = open_reader(path);
    r.need(4, "magic");
    if (std::memcmp(r.buf.data(), kMotionMagic, 4) != 0)
        throw ParseError(path + ": bad motion file magic at byte offset 0");
    r.pos = 4;
    const uint32_t version = r.u32("version");
    if (version != kMotionVersion)
        throw ParseError(path + ": unsupported motion file version " + std::to_string(version));
    const uint32_t t = r.u32("frame count");
    const uint32_t d = r.u32("feature dim");
    if (t < 1 || d < 1) throw ParseError(path + ": empty motion header at byte offset 8");
    MotionSequence seq;
    seq.frame_rate = r.f64("frame rate");
    seq.frames.resize(t, d);
    for (uint32_t i = 0; i < t; ++i)
        for (uint32_t j = 0; j < d; ++j) seq.frames(i, j) = r.f64("frame value");
    return seq;
}

void save_corpus(const std::string& dir, const std::vector<CorpusItem>& items) {
    fs::create_directories(dir);
    std::ofstream f(fs::path(dir) / "items.jsonl", std::ios::trunc);
    if (!f) throw ParseError("cannot write corpus index in " + dir);
    for (size_t i = 0; i < items.size(); ++i) {
        const CorpusItem& item = items[i];
        json rec;
        rec["task"] = task_name(item.task);
        rec["text"] = item.text;
        if (!item.edit_instruction.empty()) rec["edit_instruction"] = item.edit_instruction;
        std::vector<std::string> files;
        for (size_t m = 0; m < item.motions.size(); ++m) {
            char name[64];
            std::snprintf(name, sizeof(name), "item%05zu_%c.motion", i, m == 0 ? 'a' : 'b');
            save_motion((fs::path(dir) / name).string(), item.motions[m]);
            files.push_back(name);
        }
        rec["motions"] = files;
        rec["bins"] = {item.bins.amp, item.bins.freq, item.bins.phase, item.bins.dir};
        if (item.relation >= 0) rec["relation"] = item.relation;
        if (item.edit_kind >= 0) rec["edit_kind"] = item.edit_kind;
        f << rec.dump() << "\n";
    }
}

std::vector<CorpusItem> load_corpus(const std::string& dir) {
    const fs::path index = fs::path(dir) / "items.jsonl";
    std::ifstream f(index);
    if (!f) throw ParseError("cannot open corpus index " + index.string());
    std::vector<CorpusItem> items;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(index.string() + ":" + std::to_string(line_no) +
                             ": malformed record at byte offset " + std::to_string(e.byte));
        }
        try {
            CorpusItem item;
            item.task = task_from_name(rec.at("task").get<std::string>());
            item.text = rec.at("text").get<std::vector<int>>();
            if (rec.contains("edit_instruction"))
                item.edit_instruction = rec["edit_instruction"].get<std::vector<int>>();
            for (const auto& name : rec.at("motions"))
                item.motions.push_back(load_motion((fs::path(dir) / name.get<std::string>()).string()));
            if (rec.contains("bins")) {
                auto b = rec["bins"].get<std::vector<int>>();
                if (b.size() == 4) item.bins = {b[0], b[1], b[2], b[3]};
            }
            item.relation = rec.value("relation", -1);
            item.edit_kind = rec.value("edit_kind", -1);
            items.push_back(std::move(item));
        } catch (const json::exception& e) {
            throw ParseError(index.string() + ":" + std::to_string(line_no) +
                             ": bad record field: " + e.what());
        }
    }
    return items;
}

MotionSequence crop(const MotionSequence& seq, int length, int offset) {
    if (length < 1 || length > seq.length())
        throw std::out_of_range("crop: length " + std::to_string(length) +
                                " outside motion of " + std::to_string(seq.length()) + " frames");
    if (offset < 0 || offset + length > seq.length())
        throw std::out_of_range("crop: window [" + std::to_string(offset) + ", " +
                                std::to_string(offset + length) + ") out of range");
    MotionSequence out;
    out.frame_rate = seq.frame_rate;
    out.frames = seq.frames.middleRows(offset, length);
    return out;
}

FeatureStats zscore_stats(const std::vector<CorpusItem>& corpus) {
    if (corpus.empty()) throw ConfigError("zscore_stats: empty corpus");
    const int d = corpus[0].motions.at(0).feature_dim();
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd sq = Eigen::VectorXd::Zero(d);
    int64_t n = 0;
    for (const auto& item : corpus)
        for (const auto& m : item.motions) {
            for (int t = 0; t < m.length(); ++t) {
                mean += m.frames.row(t).transpose();
                sq += m.frames.row(t).transpose().cwiseAbs2();
            }
            n += m.length();
        }
    mean /= static_cast<Real>(n);
    FeatureStats stats;
    stats.mean = mean;
    stats.std.resize(d);
    for (int j = 0; j < d; ++j) {
        const Real var = sq(j) / static_cast<Real>(n) - mean(j) * mean(j);
        stats.std(j) = var > 1e-12 ? std::sqrt(var) : 1.0;  // constant features clamp to 1
    }
    return stats;
}

MotionSequence normalize(const MotionSequence& seq, const FeatureStats& stats) {
    MotionSequence out = seq;
    for (int t = 0; t < out.length(); ++t)
        out.frames.row(t) =
            (seq.frames.row(t).transpose() - stats.mean).cwiseQuotient(stats.std).transpose();
    return out;
}

MotionSequence denormalize(const MotionSequence& seq, const FeatureStats& stats) {
    MotionSequence out = seq;
    for (int t = 0; t < out.length(); ++t)
        out.frames.row(t) =
            (seq.frames.row(t).transpose().cwiseProduct(stats.std) + stats.mean).transpose();
    return out;
}

std::vector<CorpusItem> normalize_corpus(const std::vector<CorpusItem>& corpus,
                                         const FeatureStats& stats) {
    std::vector<CorpusItem> out = corpus;
    for (auto& item : out)
        for (auto& m : item.motions) m = normalize(m, stats);
    return out;
}

}  // namespace motionlm
