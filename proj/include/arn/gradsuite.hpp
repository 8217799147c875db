#pragma once

// End-to-end gradient verification of every training objective against
// central finite differences, on tiny double-precision instances (8x8 images,
// batch 4). Each check flattens the parameters a loss trains into one
// coordinate vector, recomputes the loss from scratch for the numeric side,
// and runs the same backward composition the trainer uses for the analytic
// side.

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "arn/dataset.hpp"
#include "arn/gradcheck.hpp"
#include "arn/losses.hpp"
#include "arn/network.hpp"
#include "arn/rng.hpp"

namespace arn {

namespace gradsuite {

inline std::int64_t param_count(const Network<double>& net) {
    std::int64_t n = 0;
    for (const auto& p : net.params()) n += p.w.size() + p.b.size();
    return n;
}

inline void pack_params(const Network<double>& net, std::vector<double>& out) {
    for (const auto& p : net.params()) {
        for (std::int64_t i = 0; i < p.w.size(); ++i) out.push_back(p.w[i]);
        for (std::int64_t i = 0; i < p.b.size(); ++i) out.push_back(p.b[i]);
    }
}

inline std::size_t unpack_params(Network<double>& net, const std::vector<double>& flat, std::size_t pos) {
    for (auto& p : net.params()) {
        for (std::int64_t i = 0; i < p.w.size(); ++i) p.w[i] = flat[pos++];
        for (std::int64_t i = 0; i < p.b.size(); ++i) p.b[i] = flat[pos++];
    }
    return pos;
}

inline void pack_grads(const GradSink<double>& sink, std::vector<double>& out) {
    for (const auto& g : sink.grads) {
        for (std::int64_t i = 0; i < g.w.size(); ++i) out.push_back(g.w[i]);
        for (std::int64_t i = 0; i < g.b.size(); ++i) out.push_back(g.b[i]);
    }
}

struct CheckResult {
    std::string name;
    GradCheckReport report;
};

struct TinyRig {
    Network<double> encoder, decoder, attack_disc, image_disc, classifier;
    Tensor<double> adv;      // [B,C,H,W] synthetic adversarial stand-in
    Tensor<double> natural;  // paired clean batch
    std::vector<int> types;  // 1-based attack types, K=2
    std::vector<int> labels;
    LossWeights weights;
    int K = 2;
};

inline TinyRig make_tiny_rig(std::uint64_t seed) {
    const Shape img{1, 8, 8};
    TinyRig rig;
    rig.encoder = build_encoder<double>(4, img);
    rig.decoder = build_decoder<double>(4, img);
    rig.attack_disc = build_attack_discriminator<double>(2, 4);
    rig.image_disc = build_image_discriminator<double>(img);
    rig.classifier = build_toynet<double>(3, img);
    SeededRng rng(seed);
    rig.encoder.init_params(rng);
    rig.decoder.init_params(rng);
    rig.attack_disc.init_params(rng);
    rig.image_disc.init_params(rng);
    rig.classifier.init_params(rng);

    rig.adv = Tensor<double>({4, 1, 8, 8});
    rig.natural = Tensor<double>({4, 1, 8, 8});
    for (std::int64_t i = 0; i < rig.adv.size(); ++i) {
        rig.adv[i] = rng.uniform();
        rig.natural[i] = rng.uniform();
    }
    rig.types = {1, 2, 1, 2};
    rig.labels = {0, 1, 2, 1};
    rig.weights = LossWeights{0.1, 0.01, 0.1};
    return rig;
}

inline Tensor<double> flat_latent(const Tensor<double>& latent) {
    std::int64_t rest = 1;
    for (std::size_t i = 1; i < latent.shape().size(); ++i) rest *= latent.shape()[i];
    return latent.reshaped({latent.dim(0), rest});
}

// Every check below perturbs the parameters of exactly the networks the loss
// trains; everything else is captured by value in the closure and stays
// fixed.
inline std::vector<CheckResult> run_loss_gradient_suite(std::uint64_t seed, double tolerance) {
    std::vector<CheckResult> results;
    const GradCheckOptions opt{1e-5, tolerance, 512, seed};
    TinyRig rig = make_tiny_rig(seed);

    // frozen intermediate: the latent the discriminators see
    const Tensor<double> latent0 = rig.encoder.forward_eval(rig.adv);
    const Tensor<double> restored0 = rig.decoder.forward_eval(latent0);

    {  // attack-type cross-entropy w.r.t. the attack discriminator
        Network<double> da = rig.attack_disc;
        std::vector<double> point;
        pack_params(da, point);
        auto f = [&](const std::vector<double>& p) {
            Network<double> net = da;
            unpack_params(net, p, 0);
            return loss_da(net.forward_eval(latent0), rig.types).value;
        };
        Cache<double> cache;
        LossResult<double> l = loss_da(da.forward(latent0, cache), rig.types);
        GradSink<double> sink = da.make_grad_sink();
        da.backward(l.grad, cache, &sink);
        std::vector<double> analytic;
        pack_grads(sink, analytic);
        results.push_back({"loss_da/d(DA)", gradcheck(f, point, analytic, opt)});
    }

    {  // attack-confusion loss w.r.t. the encoder, discriminator held constant
        std::vector<double> point;
        pack_params(rig.encoder, point);
        auto f = [&](const std::vector<double>& p) {
            Network<double> enc = rig.encoder;
            unpack_params(enc, p, 0);
            return loss_att(rig.attack_disc.forward_eval(enc.forward_eval(rig.adv))).value;
        };
        Cache<double> ce, cda;
        const Tensor<double>& latent = rig.encoder.forward(rig.adv, ce);
        LossResult<double> l = loss_att(rig.attack_disc.forward(latent, cda));
        Tensor<double> dl = rig.attack_disc.backward(l.grad, cda, nullptr);
        GradSink<double> sink = rig.encoder.make_grad_sink();
        rig.encoder.backward(dl, ce, &sink);
        std::vector<double> analytic;
        pack_grads(sink, analytic);
        results.push_back({"loss_att/d(E)", gradcheck(f, point, analytic, opt)});
    }

    {  // latent normalization w.r.t. the encoder
        std::vector<double> point;
        pack_params(rig.encoder, point);
        auto f = [&](const std::vector<double>& p) {
            Network<double> enc = rig.encoder;
            unpack_params(enc, p, 0);
            return loss_nor(flat_latent(enc.forward_eval(rig.adv)), rig.types, rig.K).value;
        };
        Cache<double> ce;
        const Tensor<double>& latent = rig.encoder.forward(rig.adv, ce);
        LossResult<double> l = loss_nor(flat_latent(latent), rig.types, rig.K);
        GradSink<double> sink = rig.encoder.make_grad_sink();
        rig.encoder.backward(l.grad.reshaped(latent.shape()), ce, &sink);
        std::vector<double> analytic;
        pack_grads(sink, analytic);
        results.push_back({"loss_nor/d(E)", gradcheck(f, point, analytic, opt)});
    }

    {  // reconstruction error through decoder and encoder jointly
        std::vector<double> point;
        pack_params(rig.encoder, point);
        pack_params(rig.decoder, point);
        auto f = [&](const std::vector<double>& p) {
            Network<double> enc = rig.encoder;
            Network<double> dec = rig.decoder;
            std::size_t pos = unpack_params(enc, p, 0);
            unpack_params(dec, p, pos);
            return loss_mse(dec.forward_eval(enc.forward_eval(rig.adv)), rig.natural).value;
        };
        Cache<double> ce, cg;
        const Tensor<double>& latent = rig.encoder.forward(rig.adv, ce);
        LossResult<double> l = loss_mse(rig.decoder.forward(latent, cg), rig.natural);
        GradSink<double> sink_g = rig.decoder.make_grad_sink();
        GradSink<double> sink_e = rig.encoder.make_grad_sink();
        Tensor<double> dl = rig.decoder.backward(l.grad, cg, &sink_g);
        rig.encoder.backward(dl, ce, &sink_e);
        std::vector<double> analytic;
        pack_grads(sink_e, analytic);
        pack_grads(sink_g, analytic);
        results.push_back({"loss_mse/d(E,G)", gradcheck(f, point, analytic, opt)});
    }

    {  // image-discriminator objective w.r.t. its own parameters
        Network<double> di = rig.image_disc;
        std::vector<double> point;
        pack_params(di, point);
        auto f = [&](const std::vector<double>& p) {
            Network<double> net = di;
            unpack_params(net, p, 0);
            return loss_di(net.forward_eval(restored0), net.forward_eval(rig.natural)).value;
        };
        Cache<double> cf, cr;
        DiLossResult<double> l = loss_di(di.forward(restored0, cf), di.forward(rig.natural, cr));
        GradSink<double> sink = di.make_grad_sink();
        di.backward(l.grad_fake, cf, &sink);
        di.backward(l.grad_real, cr, &sink);
        std::vector<double> analytic;
        pack_grads(sink, analytic);
        results.push_back({"loss_di/d(DI)", gradcheck(f, point, analytic, opt)});
    }

    {  // generator adversarial term w.r.t. the decoder, discriminator constant
        std::vector<double> point;
        pack_params(rig.decoder, point);
        auto f = [&](const std::vector<double>& p) {
            Network<double> dec = rig.decoder;
            unpack_params(dec, p, 0);
            return loss_adv(rig.image_disc.forward_eval(dec.forward_eval(latent0))).value;
        };
        Cache<double> cg, cdi;
        const Tensor<double>& restored = rig.decoder.forward(latent0, cg);
        LossResult<double> l = loss_adv(rig.image_disc.forward(restored, cdi));
        Tensor<double> dl = rig.image_disc.backward(l.grad, cdi, nullptr);
        GradSink<double> sink = rig.decoder.make_grad_sink();
        rig.decoder.backward(dl, cg, &sink);
        std::vector<double> analytic;
        pack_grads(sink, analytic);
        results.push_back({"loss_adv/d(G)", gradcheck(f, point, analytic, opt)});
    }

    {  // combined encoder objective
        const LossWeights w = rig.weights;
        std::vector<double> point;
        pack_params(rig.encoder, point);
        auto f = [&](const std::vector<double>& p) {
            Network<double> enc = rig.encoder;
            unpack_params(enc, p, 0);
            const Tensor<double> latent = enc.forward_eval(rig.adv);
            const double mse = loss_mse(rig.decoder.forward_eval(latent), rig.natural).value;
            const double att = loss_att(rig.attack_disc.forward_eval(latent)).value;
            const double nor = loss_nor(flat_latent(latent), rig.types, rig.K).value;
            return loss_E(mse, att, nor, w);
        };
        Cache<double> ce, cg, cda;
        const Tensor<double>& latent = rig.encoder.forward(rig.adv, ce);
        LossResult<double> mse = loss_mse(rig.decoder.forward(latent, cg), rig.natural);
        LossResult<double> att = loss_att(rig.attack_disc.forward(latent, cda));
        LossResult<double> nor = loss_nor(flat_latent(latent), rig.types, rig.K);
        Tensor<double> d_latent = rig.decoder.backward(mse.grad, cg, nullptr);
        axpy(d_latent, w.lambda1, rig.attack_disc.backward(att.grad, cda, nullptr));
        axpy(d_latent, w.lambda2, nor.grad.reshaped(latent.shape()));
        GradSink<double> sink = rig.encoder.make_grad_sink();
        rig.encoder.backward(d_latent, ce, &sink);
        std::vector<double> analytic;
        pack_grads(sink, analytic);
        results.push_back({"loss_E/d(E)", gradcheck(f, point, analytic, opt)});
    }

    {  // combined decoder objective
        const LossWeights w = rig.weights;
        std::vector<double> point;
        pack_params(rig.decoder, point);
        auto f = [&](const std::vector<double>& p) {
            Network<double> dec = rig.decoder;
            unpack_params(dec, p, 0);
            const Tensor<double> restored = dec.forward_eval(latent0);
            const double mse = loss_mse(restored, rig.natural).value;
            const double adv = loss_adv(rig.image_disc.forward_eval(restored)).value;
            return loss_G(mse, adv, w);
        };
        Cache<double> cg, cdi;
        const Tensor<double>& restored = rig.decoder.forward(latent0, cg);
        LossResult<double> mse = loss_mse(restored, rig.natural);
        LossResult<double> adv = loss_adv(rig.image_disc.forward(restored, cdi));
        Tensor<double> d_restored = rig.image_disc.backward(adv.grad, cdi, nullptr);
        GradSink<double> sink = rig.decoder.make_grad_sink();
        rig.decoder.backward(mse.grad, cg, &sink);
        for (std::int64_t i = 0; i < d_restored.size(); ++i) d_restored[i] *= w.theta;
        rig.decoder.backward(d_restored, cg, &sink);
        std::vector<double> analytic;
        pack_grads(sink, analytic);
        results.push_back({"loss_G/d(G)", gradcheck(f, point, analytic, opt)});
    }

    {  // classifier cross-entropy w.r.t. the input pixels (attack machinery)
        std::vector<double> point(rig.adv.vec().begin(), rig.adv.vec().end());
        auto f = [&](const std::vector<double>& p) {
            Tensor<double> x(rig.adv.shape(), p);
            return softmax_cross_entropy(rig.classifier.forward_eval(x), rig.labels).value;
        };
        Cache<double> cache;
        LossResult<double> ce = softmax_cross_entropy(rig.classifier.forward(rig.adv, cache), rig.labels);
        const Tensor<double> dx = rig.classifier.backward(ce.grad, cache, nullptr);
        std::vector<double> analytic(dx.vec().begin(), dx.vec().end());
        results.push_back({"cross_entropy/d(input)", gradcheck(f, point, analytic, opt)});
    }

    return results;
}

}  // namespace gradsuite

}  // namespace arn
