#include <cstdio>
#include <sstream>

#include "cf3d/pipeline.hpp"

namespace cf3d {

std::uint64_t conv_macs(std::uint64_t n, std::uint64_t c_in, std::uint64_t h_out, std::uint64_t w_out,
                        std::uint64_t c_out, std::uint64_t k) {
    return n * c_in * h_out * w_out * c_out * k * k;
}

std::uint64_t dense_macs(std::uint64_t n, std::uint64_t d_in, std::uint64_t d_out) { return n * d_in * d_out; }

std::uint64_t ComplexityReport::total() const {
    std::uint64_t t = 0;
    for (const auto& l : layers) t += l.macs;
    return t;
}

std::string ComplexityReport::to_text() const {
    std::ostringstream os;
    char line[160];
    for (const auto& l : layers) {
        std::snprintf(line, sizeof line, "%-24s %16llu\n", l.name.c_str(), static_cast<unsigned long long>(l.macs));
        os << line;
    }
    std::snprintf(line, sizeof line, "%-24s %16llu\n", "total", static_cast<unsigned long long>(total()));
    os << line;
    return os.str();
}

ComplexityReport complexity_report(const CorrMmfConfig& mmf, const MmrConfig& mmr, const CsiRConfig& csir,
                                   std::uint64_t n) {
    ComplexityReport r;
    auto add = [&](std::string name, std::uint64_t macs) { r.layers.push_back({std::move(name), macs}); };

    for (const char* view : {"e1", "e2"}) {
        std::uint64_t h = mmf.grid_h, w = mmf.grid_w, c_in = 1;
        for (std::size_t i = 0; i < mmf.view_channels.size(); ++i) {
            h = (h + 1) / 2;
            w = (w + 1) / 2;
            add(std::string(view) + "." + std::to_string(i), conv_macs(n, c_in, h, w, mmf.view_channels[i], mmf.kernel));
            c_in = mmf.view_channels[i];
        }
    }
    const std::uint64_t C = mmf.latent_channels();
    std::uint64_t h = mmf.grid_h >> mmf.view_channels.size(), w = mmf.grid_w >> mmf.view_channels.size();
    if (mmf.use_cam) {
        const std::uint64_t hidden = std::max<std::uint64_t>(1, C / 4);
        // The shared MLP runs on both pooled vectors.
        add("e3.cam.squeeze", 2 * conv_macs(n, C, 1, 1, hidden, 1));
        add("e3.cam.expand", 2 * conv_macs(n, hidden, 1, 1, C, 1));
    }
    for (std::size_t i = 0; i < mmf.fused_blocks; ++i) {
        h = (h + 1) / 2;
        w = (w + 1) / 2;
        add("e3." + std::to_string(i), conv_macs(n, C, h, w, C, mmf.kernel));
    }

    h = mmr.grid_h;
    w = mmr.grid_w;
    add("mmr.stem", conv_macs(n, 1, h, w, mmr.stem_channels, mmr.kernel));
    std::uint64_t c_in = mmr.stem_channels;
    for (std::size_t i = 0; i < mmr.block_channels.size(); ++i) {
        if (mmr.use_sam && (mmr.sam_every_block || i == 0))
            add("mmr.sam." + std::to_string(i), conv_macs(n, 2, h, w, 1, mmr.sam_kernel));
        h = (h + 1) / 2;
        w = (w + 1) / 2;
        add("mmr.down." + std::to_string(i), conv_macs(n, c_in, h, w, mmr.block_channels[i], mmr.kernel));
        c_in = mmr.block_channels[i];
    }

    const std::uint64_t ph = csir.latent_shape[0] / csir.patch, pw = csir.latent_shape[1] / csir.patch;
    add("csir.embed.corrmmf", conv_macs(n, csir.latent_shape[2], ph, pw, csir.embed_dim, csir.patch));
    add("csir.embed.mmr", conv_macs(n, csir.latent_shape[2], ph, pw, csir.embed_dim, csir.patch));
    std::uint64_t d = 2 * ph * pw * csir.embed_dim + 3;
    for (std::size_t i = 0; i < csir.hidden.size(); ++i) {
        add("csir.fc." + std::to_string(i), dense_macs(n, d, csir.hidden[i]));
        d = csir.hidden[i];
    }
    add("csir.fc." + std::to_string(csir.hidden.size()), dense_macs(n, d, 1));
    return r;
}

}  // namespace cf3d
