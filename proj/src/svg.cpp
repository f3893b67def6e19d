#include "perfkit/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace perfkit::svg {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::string num(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string label_num(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::string escape(const std::string& s)
{
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

std::string header(int w, int h)
{
    return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
           std::to_string(w) + "\" height=\"" + std::to_string(h) + "\" viewBox=\"0 0 " + std::to_string(w) + " " +
           std::to_string(h) + "\" font-family=\"sans-serif\" font-size=\"12\">\n" +
           "<rect x=\"0\" y=\"0\" width=\"" + std::to_string(w) + "\" height=\"" + std::to_string(h) +
           "\" fill=\"white\"/>\n";
}

std::string text(double x, double y, const std::string& s, const char* anchor = "middle", const char* extra = "")
{
    return "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" text-anchor=\"" + anchor + "\"" + extra + ">" +
           escape(s) + "</text>\n";
}

}  // namespace

std::string curve_plot(std::span<const NamedCurve> curves, const std::string& title)
{
    if (curves.empty())
        throw ValidationError("curve plot needs at least one curve");

    double tmax = 0.0, ymin = std::numeric_limits<double>::infinity(), ymax = -ymin;
    for (const auto& c : curves) {
        tmax = std::max(tmax, c.curve.dt() * static_cast<double>(c.curve.size() - 1));
        for (double v : c.curve.values()) {
            ymin = std::min(ymin, v);
            ymax = std::max(ymax, v);
        }
    }
    if (ymax - ymin < 1e-9) {
        ymin -= 1.0;
        ymax += 1.0;
    }

    const int W = 640, H = 400;
    const double left = 70, right = 20 + 140, top = 40, bottom = 50;
    const double pw = W - left - right, ph = H - top - bottom;
    auto sx = [&](double t) { return left + pw * t / tmax; };
    auto sy = [&](double v) { return top + ph * (1.0 - (v - ymin) / (ymax - ymin)); };

    std::string out = header(W, H);
    if (!title.empty())
        out += text(W / 2.0, 22, title, "middle", " font-size=\"14\"");

    out += "<g stroke=\"black\" stroke-width=\"1\" fill=\"none\">\n";
    out += "<line x1=\"" + num(left) + "\" y1=\"" + num(top + ph) + "\" x2=\"" + num(left + pw) + "\" y2=\"" +
           num(top + ph) + "\"/>\n";
    out += "<line x1=\"" + num(left) + "\" y1=\"" + num(top) + "\" x2=\"" + num(left) + "\" y2=\"" + num(top + ph) +
           "\"/>\n";
    out += "</g>\n";

    constexpr int kTicks = 5;
    for (int i = 0; i <= kTicks; ++i) {
        const double t = tmax * i / kTicks;
        const double v = ymin + (ymax - ymin) * i / kTicks;
        out += text(sx(t), top + ph + 16, label_num(t));
        out += text(left - 6, sy(v) + 4, label_num(v), "end");
    }
    out += text(left + pw / 2, H - 10, "time (s)");
    out += text(16, top + ph / 2, "HU", "middle",
                (" transform=\"rotate(-90 16 " + num(top + ph / 2) + ")\"").c_str());

    for (std::size_t k = 0; k < curves.size(); ++k) {
        const auto& c = curves[k].curve;
        const char* color = kPalette[k % std::size(kPalette)];
        out += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < c.size(); ++i) {
            if (i)
                out += ' ';
            out += num(sx(c.dt() * static_cast<double>(i))) + "," + num(sy(c[i]));
        }
        out += "\"/>\n";
        const double ly = top + 14 + 18.0 * static_cast<double>(k);
        out += "<line x1=\"" + num(left + pw + 12) + "\" y1=\"" + num(ly - 4) + "\" x2=\"" + num(left + pw + 32) +
               "\" y2=\"" + num(ly - 4) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
        out += text(left + pw + 36, ly, curves[k].label, "start");
    }
    out += "</svg>\n";
    return out;
}

std::string map_slice(const Volume3D& volume, std::size_t z, const std::string& title)
{
    const Dims3 d = volume.dims();
    if (z >= d.z)
        throw ValidationError("slice " + std::to_string(z) + " outside volume " + to_string(d));

    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t y = 0; y < d.y; ++y)
        for (std::size_t x = 0; x < d.x; ++x) {
            const double v = volume.at({z, y, x});
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    const double span = hi - lo > 0.0 ? hi - lo : 1.0;

    const double cell = std::max(4.0, std::min(16.0, 480.0 / static_cast<double>(std::max(d.y, d.x))));
    const double left = 20, top = 40;
    const int W = static_cast<int>(left + cell * static_cast<double>(d.x) + 120);
    const int H = static_cast<int>(top + cell * static_cast<double>(d.y) + 30);

    std::string out = header(W, H);
    out += text(W / 2.0, 22, title.empty() ? "slice z=" + std::to_string(z) : title, "middle", " font-size=\"14\"");
    out += "<g shape-rendering=\"crispEdges\">\n";
    for (std::size_t y = 0; y < d.y; ++y)
        for (std::size_t x = 0; x < d.x; ++x) {
            const int g = static_cast<int>(std::lround(255.0 * (volume.at({z, y, x}) - lo) / span));
            out += "<rect x=\"" + num(left + cell * static_cast<double>(x)) + "\" y=\"" +
                   num(top + cell * static_cast<double>(y)) + "\" width=\"" + num(cell) + "\" height=\"" + num(cell) +
                   "\" fill=\"rgb(" + std::to_string(g) + "," + std::to_string(g) + "," + std::to_string(g) +
                   ")\"/>\n";
        }
    out += "</g>\n";
    const double lx = left + cell * static_cast<double>(d.x) + 16;
    out += "<rect x=\"" + num(lx) + "\" y=\"" + num(top) + "\" width=\"14\" height=\"14\" fill=\"rgb(255,255,255)\" "
           "stroke=\"black\"/>\n";
    out += text(lx + 20, top + 11, "max " + label_num(hi), "start");
    out += "<rect x=\"" + num(lx) + "\" y=\"" + num(top + 22) + "\" width=\"14\" height=\"14\" fill=\"rgb(0,0,0)\"/>\n";
    out += text(lx + 20, top + 33, "min " + label_num(lo), "start");
    out += "</svg>\n";
    return out;
}

}  // namespace perfkit::svg
