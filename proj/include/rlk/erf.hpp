#pragma once

#include <iosfwd>
#include <vector>

#include "rlk/replknet.hpp"

namespace rlk {

/// Aggregated input-contribution map for the central output position.
/// `raw` is the clamped gradient mass summed over samples and input
/// channels; `a` is log10(raw + 1) rescaled so its maximum is 1.
struct ERFMap {
    int h = 0, w = 0;
    std::vector<double> raw;  // h*w, nonnegative
    std::vector<float> a;     // h*w, in [0,1]
    int n_samples = 0;
    bool degenerate = false;  // raw identically zero

    double raw_at(int y, int x) const { return raw[static_cast<size_t>(y) * w + x]; }
    float a_at(int y, int x) const { return a[static_cast<size_t>(y) * w + x]; }
};

struct AreaRatioRow {
    double threshold = 0.0;  // fraction in (0, 1]
    int side = 0;            // pixels
    double ratio = 0.0;      // side^2 / (h*w)
};

struct AreaRatioReport {
    std::vector<AreaRatioRow> rows;
    /// Header `threshold,side,ratio`.
    void write_csv(std::ostream& os) const;
};

/// Contribution of every input pixel to the central spatial position of the
/// final feature map: forward, seed a unit gradient at (h'/2, w'/2) of every
/// channel and sample, run the vector-Jacobian chain back to the input,
/// clamp negatives, sum over samples and input channels, log-compress,
/// rescale by the max. The graph must be headless.
ERFMap compute_erf(const LayerGraph& g, const ModelWeights& w, const std::vector<Tensor>& inputs,
                   Backend backend);

/// Gradient of the summed central outputs with respect to one input batch
/// (pre-clamp). Exposed for gradient-checking tests.
Tensor input_gradient(const LayerGraph& g, const ModelWeights& w, const Tensor& x,
                      Backend backend);

/// Smallest centered square holding at least fraction t of the total
/// contribution mass, one row per threshold. Mass is measured on the raw
/// (pre-log) aggregate unless on_log_scale is set.
AreaRatioReport area_ratio(const ERFMap& map, const std::vector<double>& thresholds,
                           bool on_log_scale = false);

/// Comparative receptive-field index K * sqrt(L): grows linearly with the
/// kernel size, sub-linearly with the depth.
double theoretical_erf(int kernel, int layers);

/// Grayscale 8-bit view of `a` as binary PGM (P5, maxval 255), pixel =
/// round-half-up of a*255. A degenerate map also writes a "<path>.txt"
/// sidecar noting the all-zero result.
void render_heatmap(const ERFMap& map, const std::string& path);

void write_pgm(const std::string& path, const std::vector<uint8_t>& pixels, int h, int w);
std::vector<uint8_t> read_pgm(const std::string& path, int& h, int& w);
/// PGM (P5) or PPM (P6) to a (1, c, h, w) tensor scaled to [0, 1].
Tensor read_image(const std::string& path);

}  // namespace rlk
