// SPDX-License-Identifier: Apache-2.0
#include "tts/biassim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace tts {

namespace {

std::string fmt(const char* f, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

}  // namespace

void write_curve_tsv(const VoteScalingCurve& curve, std::ostream& out)
{
    out << "B\taccuracy\tmethod\ttrials\tci\n";
    for (const auto& p : curve.points)
        out << p.batch << '\t' << fmt("%.12g", p.accuracy) << '\t' << to_string(p.method) << '\t' << p.trials << '\t'
            << fmt("%.6g", p.ci_halfwidth) << '\n';
}

void write_curve_svg(const VoteScalingCurve& curve, std::ostream& out)
{
    constexpr double width = 640, height = 400, left = 60, right = 20, top = 30, bottom = 50;
    const double plot_w = width - left - right;
    const double plot_h = height - top - bottom;
    const int max_b = curve.points.empty() ? 1 : std::max(curve.points.back().batch, 2);
    // Log-scaled B axis.
    auto x = [&](int b) { return left + plot_w * std::log(static_cast<double>(b)) / std::log(static_cast<double>(max_b)); };
    auto y = [&](double a) { return top + plot_h * (1.0 - std::clamp(a, 0.0, 1.0)); };

    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << left << "\" y=\"18\">Majority-vote accuracy, correct answer \"" << curve.correct
        << "\"</text>\n";
    for (int i = 0; i <= 4; ++i) {
        const double a = i / 4.0;
        out << "<line x1=\"" << left << "\" x2=\"" << width - right << "\" y1=\"" << y(a) << "\" y2=\"" << y(a)
            << "\" stroke=\"#ddd\"/>\n";
        out << "<text x=\"" << left - 8 << "\" y=\"" << y(a) + 4 << "\" text-anchor=\"end\">" << fmt("%.2f", a)
            << "</text>\n";
    }
    for (const auto& p : curve.points)
        out << "<text x=\"" << x(p.batch) << "\" y=\"" << height - bottom + 18 << "\" text-anchor=\"middle\">"
            << p.batch << "</text>\n";
    out << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 10 << "\" text-anchor=\"middle\">B (log scale)</text>\n";
    out << "<line x1=\"" << left << "\" x2=\"" << left << "\" y1=\"" << top << "\" y2=\"" << top + plot_h
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << left << "\" x2=\"" << width - right << "\" y1=\"" << top + plot_h << "\" y2=\""
        << top + plot_h << "\" stroke=\"black\"/>\n";

    if (!curve.points.empty()) {
        out << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
        for (const auto& p : curve.points)
            out << x(p.batch) << ',' << y(p.accuracy) << ' ';
        out << "\"/>\n";
    }
    for (const auto& p : curve.points) {
        if (p.method == CurveMethod::monte_carlo)
            out << "<line x1=\"" << x(p.batch) << "\" x2=\"" << x(p.batch) << "\" y1=\""
                << y(p.accuracy - p.ci_halfwidth) << "\" y2=\"" << y(p.accuracy + p.ci_halfwidth)
                << "\" stroke=\"#1f77b4\"/>\n";
        out << "<circle cx=\"" << x(p.batch) << "\" cy=\"" << y(p.accuracy) << "\" r=\"3\" fill=\""
            << (p.method == CurveMethod::exact ? "#1f77b4" : "white") << "\" stroke=\"#1f77b4\"/>\n";
    }
    out << "</svg>\n";
}

}  // namespace tts
