// SPDX-License-Identifier: Apache-2.0
#include "motionlm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>

#include <json.hpp>

namespace motionlm {

namespace fs = std::filesystem;
using nlohmann::json;

Real mpjpe(const MotionSequence& reference, const MotionSequence& reconstruction) {
    if (reference.length() != reconstruction.length() ||
        reference.feature_dim() != reconstruction.feature_dim())
        throw ShapeError("mpjpe: sequences must share T and d");
    const int joints = reference.feature_dim() / 2;
    Real total = 0;
    for (int t = 0; t < reference.length(); ++t)
        for (int j = 0; j < joints; ++j) {
            const Real dx = reconstruction.frames(t, 2 * j) - reference.frames(t, 2 * j);
            const Real dy = reconstruction.frames(t, 2 * j + 1) - reference.frames(t, 2 * j + 1);
            total += std::sqrt(dx * dx + dy * dy);
        }
    return total / (static_cast<Real>(reference.length()) * joints);
}

std::pair<Real, Real> ade_fde(const MotionSequence& pred, const MotionSequence& gt) {
    if (pred.length() != gt.length() || pred.feature_dim() != gt.feature_dim())
        throw ShapeError("ade_fde: sequences must share T and d");
    const int joints = pred.feature_dim() / 2;
    Real ade = 0, fde = 0;
    for (int t = 0; t < pred.length(); ++t) {
        Real frame = 0;
        for (int j = 0; j < joints; ++j) {
            const Real dx = pred.frames(t, 2 * j) - gt.frames(t, 2 * j);
            const Real dy = pred.frames(t, 2 * j + 1) - gt.frames(t, 2 * j + 1);
            frame += std::sqrt(dx * dx + dy * dy);
        }
        frame /= joints;
        ade += frame;
        if (t == pred.length() - 1) fde = frame;
    }
    return {ade / pred.length(), fde};
}

StreamNll per_stream_nll(const MotionLm& model, const TokenizerModel& tokenizer,
                         const std::vector<CorpusItem>& items, LayoutKind layout) {
    StreamNll out;
    out.raw = evaluate_nll(model, tokenizer, items, layout);
    for (size_t l = 0; l < out.raw.stream_sum.size(); ++l)
        out.per_stream.push_back(out.raw.stream_count[l] > 0
                                     ? out.raw.stream_sum[l] / out.raw.stream_count[l]
                                     : 0.0);
    out.text = out.raw.text_count > 0 ? out.raw.text_sum / out.raw.text_count : 0.0;
    return out;
}

namespace {

Real bin_match_fraction(const MotionBins& got, const MotionBins& want) {
    int hits = 0;
    hits += got.amp == want.amp;
    hits += got.freq == want.freq;
    hits += got.phase == want.phase;
    hits += got.dir == want.dir;
    return hits / 4.0;
}

}  // namespace

std::map<std::string, Real> evaluate_model(const MotionLm& model, const TokenizerModel& tokenizer,
                                           const std::vector<CorpusItem>& heldout,
                                           const SyntheticSpec& spec, uint64_t seed) {
    std::map<std::string, Real> out;
    const LayoutKind layout = model.config.layout;
    TextGrammar grammar;

    StreamNll nll = per_stream_nll(model, tokenizer, heldout, layout);
    out["nll/total"] = nll.raw.mean();
    if (nll.raw.text_count > 0) out["nll/text"] = nll.text;
    for (size_t l = 0; l < nll.per_stream.size(); ++l)
        if (nll.raw.stream_count[l] > 0)
            out["nll/stream" + std::to_string(l + 1)] = nll.per_stream[l];

    SamplingConfig greedy;
    greedy.seed = seed;
    int t2m_n = 0, m2t_n = 0, edit_n = 0, pred_n = 0;
    Real t2m_match = 0, m2t_match = 0, edit_match = 0, ade_sum = 0, fde_sum = 0;
    for (const auto& item : heldout) {
        if (item.task != Task::T2M && item.task != Task::M2T && item.task != Task::Edit &&
            item.task != Task::M2MPredict)
            continue;
        LaidSequence prompt = prompt_only(item, tokenizer, model.vocab, layout);
        TargetPlan plan = target_plan_for(item, tokenizer);
        GenerateOutput gen = generate(model, prompt, plan, greedy, 512);
        switch (item.task) {
            case Task::T2M: {
                if (gen.motion_grids.empty()) break;
                MotionSequence decoded = detokenize(tokenizer, gen.motion_grids[0], spec.frames);
                t2m_match += bin_match_fraction(estimate_bins(decoded, spec), item.bins);
                ++t2m_n;
                break;
            }
            case Task::M2T: {
                m2t_match += bin_match_fraction(grammar.parse_bins(gen.text_ids), item.bins);
                ++m2t_n;
                break;
            }
            case Task::Edit: {
                if (gen.motion_grids.empty()) break;
                MotionSequence decoded = detokenize(tokenizer, gen.motion_grids[0], spec.frames);
                const MotionBins want =
                    edited_bins(item.bins, static_cast<EditKind>(item.edit_kind), spec);
                edit_match += bin_match_fraction(estimate_bins(decoded, spec), want);
                ++edit_n;
                break;
            }
            case Task::M2MPredict: {
                if (gen.motion_grids.empty()) break;
                const int t_latent = static_cast<int>(tokenize(tokenizer, item.motions[0]).rows());
                const int prefix = t_latent - plan.steps_per_span;
                const int ratio = tokenizer.config.downsample;
                const int frames = plan.steps_per_span * ratio;
                MotionSequence decoded = detokenize(tokenizer, gen.motion_grids[0], frames);
                MotionSequence gt = crop(item.motions[0], frames, prefix * ratio);
                auto [ade, fde] = ade_fde(decoded, gt);
                ade_sum += ade;
                fde_sum += fde;
                ++pred_n;
                break;
            }
            default:
                break;
        }
    }
    if (t2m_n) out["T2M/bin_match"] = t2m_match / t2m_n;
    if (m2t_n) out["M2T/bin_match"] = m2t_match / m2t_n;
    if (edit_n) out["Edit/bin_match"] = edit_match / edit_n;
    if (pred_n) {
        out["M2M-predict/ade"] = ade_sum / pred_n;
        out["M2M-predict/fde"] = fde_sum / pred_n;
    }
    return out;
}

namespace {

std::string fmt_real(Real v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

void scan_jsonl(const fs::path& path, MetricsReport& report,
                const std::function<void(const json&)>& on_record) {
    std::ifstream f(path);
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            on_record(json::parse(line));
        } catch (const json::exception&) {
            report.warnings.push_back(path.filename().string() + ":" + std::to_string(line_no) +
                                      ": unparseable record skipped");
        }
    }
}

void svg_header(std::ofstream& f, int w, int h, const std::string& title) {
    f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
    f << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
    f << "<text x=\"" << w / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" << title
      << "</text>\n";
}

void write_line_chart(const fs::path& path, const std::string& title,
                      const std::vector<std::pair<Real, Real>>& points) {
    const int w = 480, h = 320, m = 48;
    std::ofstream f(path, std::ios::trunc);
    svg_header(f, w, h, title);
    if (!points.empty()) {
        Real x_lo = points[0].first, x_hi = points[0].first;
        Real y_lo = points[0].second, y_hi = points[0].second;
        for (auto& [x, y] : points) {
            x_lo = std::min(x_lo, x); x_hi = std::max(x_hi, x);
            y_lo = std::min(y_lo, y); y_hi = std::max(y_hi, y);
        }
        if (x_hi == x_lo) x_hi = x_lo + 1;
        if (y_hi == y_lo) y_hi = y_lo + 1;
        auto sx = [&](Real x) { return m + (x - x_lo) / (x_hi - x_lo) * (w - 2 * m); };
        auto sy = [&](Real y) { return h - m - (y - y_lo) / (y_hi - y_lo) * (h - 2 * m); };
        f << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
        for (auto& [x, y] : points) f << fmt_real(sx(x)) << "," << fmt_real(sy(y)) << " ";
        f << "\"/>\n";
        for (auto& [x, y] : points) {
            f << "<circle cx=\"" << fmt_real(sx(x)) << "\" cy=\"" << fmt_real(sy(y))
              << "\" r=\"3\" fill=\"steelblue\"/>\n";
            f << "<text x=\"" << fmt_real(sx(x)) << "\" y=\"" << h - m + 16
              << "\" text-anchor=\"middle\" font-size=\"10\">" << fmt_real(x) << "</text>\n";
            f << "<text x=\"" << fmt_real(sx(x)) << "\" y=\"" << fmt_real(sy(y) - 6)
              << "\" text-anchor=\"middle\" font-size=\"9\">" << fmt_real(y) << "</text>\n";
        }
        f << "<line x1=\"" << m << "\" y1=\"" << h - m << "\" x2=\"" << w - m << "\" y2=\"" << h - m
          << "\" stroke=\"black\"/>\n";
        f << "<line x1=\"" << m << "\" y1=\"" << m << "\" x2=\"" << m << "\" y2=\"" << h - m
          << "\" stroke=\"black\"/>\n";
    }
    f << "</svg>\n";
}

void write_bar_chart(const fs::path& path, const std::string& title,
                     const std::vector<std::pair<std::string, Real>>& bars) {
    const int w = 480, h = 320, m = 48;
    std::ofstream f(path, std::ios::trunc);
    svg_header(f, w, h, title);
    if (!bars.empty()) {
        Real y_hi = 0;
        for (auto& [k, v] : bars) y_hi = std::max(y_hi, v);
        if (y_hi <= 0) y_hi = 1;
        const Real bw = static_cast<Real>(w - 2 * m) / bars.size();
        for (size_t i = 0; i < bars.size(); ++i) {
            const Real bh = bars[i].second / y_hi * (h - 2 * m);
            const Real x = m + i * bw + bw * 0.15;
            f << "<rect x=\"" << fmt_real(x) << "\" y=\"" << fmt_real(h - m - bh) << "\" width=\""
              << fmt_real(bw * 0.7) << "\" height=\"" << fmt_real(bh) << "\" fill=\"darkorange\"/>\n";
            f << "<text x=\"" << fmt_real(x + bw * 0.35) << "\" y=\"" << h - m + 16
              << "\" text-anchor=\"middle\" font-size=\"9\">" << bars[i].first << "</text>\n";
            f << "<text x=\"" << fmt_real(x + bw * 0.35) << "\" y=\"" << fmt_real(h - m - bh - 4)
              << "\" text-anchor=\"middle\" font-size=\"9\">" << fmt_real(bars[i].second)
              << "</text>\n";
        }
        f << "<line x1=\"" << m << "\" y1=\"" << h - m << "\" x2=\"" << w - m << "\" y2=\"" << h - m
          << "\" stroke=\"black\"/>\n";
    }
    f << "</svg>\n";
}

}  // namespace

MetricsReport build_report(const std::string& run_dir) {
    MetricsReport report;
    if (!fs::exists(run_dir)) {
        report.warnings.push_back("run directory does not exist: " + run_dir);
        return report;
    }

    const fs::path metrics = fs::path(run_dir) / "metrics.jsonl";
    if (fs::exists(metrics)) {
        scan_jsonl(metrics, report, [&](const json& rec) {
            if (rec.contains("metric") && rec.contains("value")) {
                const Real v = rec["value"].get<Real>();
                if (std::isfinite(v))
                    report.values[rec["metric"].get<std::string>()] = v;
                else
                    report.warnings.push_back("non-finite metric dropped: " +
                                              rec["metric"].get<std::string>());
            } else if (rec.contains("step") && rec.contains("loss")) {
                report.values["train/final_loss"] = rec["loss"].get<Real>();
                report.values["train/final_step"] = rec["step"].get<Real>();
            }
        });
    } else {
        report.warnings.push_back("missing metrics.jsonl");
    }

    const fs::path recon = fs::path(run_dir) / "recon_vs_L.jsonl";
    if (fs::exists(recon)) {
        scan_jsonl(recon, report, [&](const json& rec) {
            if (rec.contains("L") && rec.contains("mse")) {
                report.recon_curve.emplace_back(rec["L"].get<Real>(), rec["mse"].get<Real>());
                report.values["recon/mse_L" + std::to_string(rec["L"].get<int>())] =
                    rec["mse"].get<Real>();
            }
        });
        std::sort(report.recon_curve.begin(), report.recon_curve.end());
    } else {
        report.warnings.push_back("missing recon_vs_L.jsonl");
    }

    const fs::path layouts = fs::path(run_dir) / "nll_by_layout.jsonl";
    if (fs::exists(layouts)) {
        scan_jsonl(layouts, report, [&](const json& rec) {
            if (rec.contains("layout") && rec.contains("stream") && rec.contains("nll")) {
                const std::string label = rec["layout"].get<std::string>() + "/s" +
                                          std::to_string(rec["stream"].get<int>());
                report.layout_bars.emplace_back(label, rec["nll"].get<Real>());
                report.values["nll_layout/" + label] = rec["nll"].get<Real>();
            }
        });
        std::sort(report.layout_bars.begin(), report.layout_bars.end());
    } else {
        report.warnings.push_back("missing nll_by_layout.jsonl");
    }

    const fs::path config = fs::path(run_dir) / "config.json";
    if (fs::exists(config)) {
        report.metadata["config_hash"] = sha1_file(config.string());
        std::ifstream f(config);
        try {
            json c = json::parse(f);
            if (c.contains("seed"))
                report.metadata["seed"] = std::to_string(c["seed"].get<uint64_t>());
        } catch (const json::exception&) {
            report.warnings.push_back("unparseable config.json");
        }
    } else {
        report.warnings.push_back("missing config.json");
    }

    std::vector<fs::path> ckpts;
    for (const auto& entry : fs::directory_iterator(run_dir))
        if (entry.path().extension() == ".ckpt") ckpts.push_back(entry.path());
    std::sort(ckpts.begin(), ckpts.end());
    for (const auto& p : ckpts)
        report.metadata["hash." + p.filename().string()] = sha1_file(p.string());

    return report;
}

void write_report(const MetricsReport& report, const std::string& out_dir) {
    fs::create_directories(out_dir);
    std::ofstream csv(fs::path(out_dir) / "report.csv", std::ios::trunc);
    csv << "name,value\n";
    for (const auto& [k, v] : report.values) csv << k << "," << fmt_real(v) << "\n";
    for (const auto& [k, v] : report.metadata) csv << "meta." << k << "," << v << "\n";
    csv.close();

    write_line_chart(fs::path(out_dir) / "recon_vs_L.svg", "reconstruction MSE vs L",
                     report.recon_curve);
    write_bar_chart(fs::path(out_dir) / "nll_by_layout.svg", "held-out NLL by layout/stream",
                    report.layout_bars);

    if (!report.warnings.empty()) {
        std::ofstream warn(fs::path(out_dir) / "warnings.txt", std::ios::trunc);
        for (const auto& w : report.warnings) warn << w << "\n";
    }
}

MetricsReport report(const std::string& run_dir, const std::string& out_dir) {
    MetricsReport r = build_report(run_dir);
    write_report(r, out_dir);
    return r;
}

}  // namespace motionlm
