//! Conditional-prior VAE with a linear outcome head.
//!
//! The auxiliary input is `u = t` (case a) or `u = (w, t)` (case b), with
//! the treatment always in the last slot.

mod loss;
mod model;
mod serial;

pub use loss::{
    kl_diag_gauss, loss_terms, objective_and_grad, reparam_sample, total_loss, BatchInputs,
    LossTerms, ObjectiveWeights,
};
#[cfg(test)]
use loss::build_loss_graph;
pub use model::{
    ArchConfig, AuxVar, CaseTag, DiagGaussian, ImavaeModel, InputScaling, LinearPredictor,
    ModelDims, ModelVars, LOG_VAR_MAX, LOG_VAR_MIN,
};
pub use serial::MODEL_FORMAT;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradnet::{Activation, Layer, MlpParams, Parameterized};
    use crate::numkit::{Matrix, RngStream};
    use std::f64::consts::PI;

    fn small_arch() -> ArchConfig {
        ArchConfig {
            hidden_layers: 1,
            hidden_width: 5,
            activation: Activation::Tanh,
        }
    }

    /// Random model with nonzero biases and predictor so every parameter matters.
    fn random_model(dims: ModelDims, seed: u64) -> ImavaeModel {
        let mut rng = RngStream::new(seed, 99);
        let mut m = ImavaeModel::new(dims, &small_arch(), &mut rng);
        for t in m.tensors_mut() {
            for v in t.iter_mut() {
                *v += 0.3 * rng.normal();
            }
        }
        m
    }

    fn scalar_mlp(p: &MlpParams, input: &[f64]) -> Vec<f64> {
        let mut h = input.to_vec();
        let n = p.layers().len();
        for (i, layer) in p.layers().iter().enumerate() {
            let mut out = Vec::new();
            for r in 0..layer.weight.rows() {
                let mut s = layer.bias[r];
                for c in 0..layer.weight.cols() {
                    s += layer.weight.get(r, c) * h[c];
                }
                out.push(if i + 1 < n {
                    match p.activations()[i] {
                        Activation::Tanh => s.tanh(),
                        Activation::Relu => s.max(0.0),
                        Activation::Identity => s,
                    }
                } else {
                    s
                });
            }
            h = out;
        }
        h
    }

    fn linear(weight: Vec<Vec<f64>>, bias: Vec<f64>) -> MlpParams {
        MlpParams::new(
            vec![Layer {
                weight: Matrix::from_rows(&weight).unwrap(),
                bias,
            }],
            vec![],
        )
        .unwrap()
    }

    fn dims_a(x: usize, d: usize) -> ModelDims {
        ModelDims::new(x, d, 0, CaseTag::A).unwrap()
    }

    #[test]
    fn encode_is_pure_and_matches_scalar_oracle() {
        let m = random_model(dims_a(3, 2), 1);
        let u = AuxVar::treatment(0).unwrap();
        let x = [0.4, -1.2, 2.0];
        let a = m.encode(&x, &u).unwrap();
        assert_eq!(a, m.encode(&x, &u).unwrap());
        let out = scalar_mlp(&m.encoder, &[0.4, -1.2, 2.0, 0.0]);
        for i in 0..2 {
            assert!((a.mean[i] - out[i]).abs() < 1e-10);
            assert!((a.log_var[i] - out[2 + i].clamp(-10.0, 10.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn flipping_treatment_changes_one_encoder_input() {
        let m = random_model(dims_a(4, 2), 2);
        let x = [1.0, 2.0, 3.0, 4.0];
        let a = m.encoder_input(&x, &AuxVar::treatment(0).unwrap()).unwrap();
        let b = m.encoder_input(&x, &AuxVar::treatment(1).unwrap()).unwrap();
        assert_eq!(a.len(), 5);
        let changed: Vec<_> = (0..5).filter(|&i| a[i] != b[i]).collect();
        assert_eq!(changed, vec![4]);
    }

    #[test]
    fn encoder_input_width_is_x_plus_aux() {
        let dims = ModelDims::new(4, 2, 2, CaseTag::B).unwrap();
        let m = random_model(dims, 3);
        let u = AuxVar::new(1, Some(vec![0.5, -0.5])).unwrap();
        assert_eq!(m.encoder_input(&[0.0; 4], &u).unwrap().len(), 4 + 3);
        assert_eq!(m.encoder.input_dim(), 7);
        assert_eq!(dims_a(4, 2).aux_dim(), 1);
    }

    #[test]
    fn case_routing_is_validated() {
        assert!(ModelDims::new(4, 2, 0, CaseTag::B).is_err());
        assert!(ModelDims::new(4, 2, 1, CaseTag::A).is_err());
        assert!(ModelDims::new(0, 2, 0, CaseTag::A).is_err());
        let ma = random_model(dims_a(3, 2), 4);
        assert!(ma.prior(&AuxVar::new(0, Some(vec![1.0])).unwrap()).is_err());
        let mb = random_model(ModelDims::new(3, 2, 2, CaseTag::B).unwrap(), 4);
        assert!(mb.prior(&AuxVar::treatment(0).unwrap()).is_err());
        assert!(mb.prior(&AuxVar::new(0, Some(vec![1.0])).unwrap()).is_err());
        assert!(AuxVar::treatment(2).is_err());
    }

    #[test]
    fn encode_rejects_wrong_length() {
        let m = random_model(dims_a(3, 2), 5);
        assert!(m.encode(&[0.0; 2], &AuxVar::treatment(0).unwrap()).is_err());
        assert!(m.decode(&[0.0; 3]).is_err());
        assert!(m.predict_y(&[0.0], &AuxVar::treatment(0).unwrap()).is_err());
    }

    #[test]
    fn zero_prior_head_gives_standard_normal() {
        let mut m = random_model(ModelDims::new(3, 2, 1, CaseTag::B).unwrap(), 6);
        for l in m.prior_head.layers_mut() {
            l.weight = Matrix::zeros(l.weight.rows(), l.weight.cols());
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        for (t, w) in [(0, -3.0), (1, 0.0), (1, 7.5)] {
            let p = m.prior(&AuxVar::new(t, Some(vec![w])).unwrap()).unwrap();
            assert_eq!(p.mean, vec![0.0, 0.0]);
            assert_eq!(p.log_var, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn case_a_has_two_priors_matching_oracle() {
        let m = random_model(dims_a(3, 2), 7);
        let p0 = m.prior(&AuxVar::treatment(0).unwrap()).unwrap();
        let p1 = m.prior(&AuxVar::treatment(1).unwrap()).unwrap();
        assert_ne!(p0, p1);
        for (t, p) in [(0.0, &p0), (1.0, &p1)] {
            let out = scalar_mlp(&m.prior_head, &[t]);
            for i in 0..2 {
                assert!((p.mean[i] - out[i]).abs() < 1e-10);
                assert!((p.log_var[i] - out[2 + i].clamp(-10.0, 10.0)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn log_variance_is_clamped() {
        let dims = dims_a(1, 1);
        let head = linear(vec![vec![0.0], vec![0.0]], vec![0.0, 50.0]);
        let enc = linear(vec![vec![0.0, 0.0], vec![0.0, 0.0]], vec![0.0, -50.0]);
        let m = ImavaeModel::from_parts(
            dims,
            enc,
            linear(vec![vec![1.0]], vec![0.0]),
            head,
            LinearPredictor {
                coeffs: vec![0.0, 0.0],
                intercept: 0.0,
            },
            InputScaling::identity(&dims),
        )
        .unwrap();
        let u = AuxVar::treatment(1).unwrap();
        assert_eq!(m.prior(&u).unwrap().log_var, vec![LOG_VAR_MAX]);
        assert_eq!(m.encode(&[0.3], &u).unwrap().log_var, vec![LOG_VAR_MIN]);
    }

    #[test]
    fn reparam_fixed_points() {
        let g = DiagGaussian::new(vec![1.0, -2.0], vec![0.7, -0.3]).unwrap();
        assert_eq!(reparam_sample(&g, &[0.0, 0.0]).unwrap(), g.mean);
        let g0 = DiagGaussian::new(vec![1.0, -2.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(reparam_sample(&g0, &[1.0, 0.0]).unwrap(), vec![2.0, -2.0]);
        assert!(reparam_sample(&g, &[0.0]).is_err());
    }

    #[test]
    fn reparam_moments() {
        let g = DiagGaussian::new(vec![0.5, -1.5], vec![0.8, -1.2]).unwrap();
        let mut rng = RngStream::new(11, 0);
        let n = 100_000;
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..n {
            let z = reparam_sample(&g, &rng.normal_vec(2)).unwrap();
            for i in 0..2 {
                sum[i] += z[i];
                sq[i] += z[i] * z[i];
            }
        }
        for i in 0..2 {
            let var = g.log_var[i].exp();
            let mean = sum[i] / n as f64;
            let emp_var = sq[i] / n as f64 - mean * mean;
            assert!((mean - g.mean[i]).abs() < 4.0 * (var / n as f64).sqrt());
            // Var of sample variance for a Gaussian is 2σ⁴/(n−1)
            let se_var = (2.0 * var * var / (n - 1) as f64).sqrt();
            assert!((emp_var - var).abs() < 4.0 * se_var, "{emp_var} vs {var}");
        }
    }

    #[test]
    fn decode_linear_layer_and_oracle() {
        let dims = dims_a(2, 2);
        let m = ImavaeModel::from_parts(
            dims,
            linear(vec![vec![0.0; 3]; 4], vec![0.0; 4]),
            linear(vec![vec![1.0, 2.0], vec![-1.0, 0.5]], vec![0.1, 0.2]),
            linear(vec![vec![0.0]; 4], vec![0.0; 4]),
            LinearPredictor {
                coeffs: vec![0.0; 3],
                intercept: 0.0,
            },
            InputScaling::identity(&dims),
        )
        .unwrap();
        let out = m.decode(&[1.0, 2.0]).unwrap();
        assert!((out[0] - 5.1).abs() < 1e-12 && (out[1] - 0.2).abs() < 1e-12);

        let r = random_model(dims_a(4, 2), 8);
        let z = [0.3, -0.9];
        let a = r.decode(&z).unwrap();
        assert_eq!(a, r.decode(&z).unwrap());
        for (x, o) in a.iter().zip(scalar_mlp(&r.decoder, &z)) {
            assert!((x - o).abs() < 1e-10);
        }
    }

    #[test]
    fn predict_y_cases() {
        let mut m = random_model(ModelDims::new(3, 2, 2, CaseTag::B).unwrap(), 9);
        let u = AuxVar::new(1, Some(vec![0.4, -2.0])).unwrap();
        m.predictor = LinearPredictor {
            coeffs: vec![0.0; 5],
            intercept: 2.5,
        };
        assert_eq!(m.predict_y(&[3.0, -1.0], &u).unwrap(), 2.5);
        m.predictor = LinearPredictor {
            coeffs: vec![1.0, 0.0, 0.0, 0.0, 0.0],
            intercept: 0.0,
        };
        assert_eq!(m.predict_y(&[3.0, -1.0], &u).unwrap(), 3.0);

        let mut rng = RngStream::new(3, 3);
        m.predictor = LinearPredictor {
            coeffs: rng.normal_vec(5),
            intercept: rng.normal(),
        };
        let z = [0.7, 1.1];
        let input = [0.7, 1.1, 0.4, -2.0, 1.0];
        let mut want = m.predictor.intercept;
        for i in 0..5 {
            want += m.predictor.coeffs[i] * input[i];
        }
        assert!((m.predict_y(&z, &u).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn kl_closed_forms() {
        let q = DiagGaussian::new(vec![0.3, -1.0], vec![0.2, 0.5]).unwrap();
        assert_eq!(kl_diag_gauss(&q, &q).unwrap(), 0.0);
        let mu = DiagGaussian::new(vec![1.0, -2.0, 0.5], vec![0.0; 3]).unwrap();
        let std = DiagGaussian::new(vec![0.0; 3], vec![0.0; 3]).unwrap();
        assert!((kl_diag_gauss(&mu, &std).unwrap() - 0.5 * 5.25).abs() < 1e-14);
        assert!(kl_diag_gauss(&mu, &q).is_err());
    }

    fn log_density(g: &DiagGaussian, z: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..g.dim() {
            let v = g.log_var[i].exp();
            s += -0.5 * ((2.0 * PI * v).ln() + (z[i] - g.mean[i]).powi(2) / v);
        }
        s
    }

    #[test]
    fn kl_matches_monte_carlo() {
        let q = DiagGaussian::new(vec![0.4, -0.7], vec![-0.5, 0.3]).unwrap();
        let p = DiagGaussian::new(vec![-0.2, 0.1], vec![0.4, -0.2]).unwrap();
        let mut rng = RngStream::new(21, 0);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z = reparam_sample(&q, &rng.normal_vec(2)).unwrap();
            let v = log_density(&q, &z) - log_density(&p, &z);
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        let kl = kl_diag_gauss(&q, &p).unwrap();
        assert!((kl - mean).abs() < 3.0 * se, "kl {kl}, mc {mean} ± {se}");
    }

    #[test]
    fn kl_nonnegative_on_random_pairs() {
        let mut rng = RngStream::new(5, 5);
        for _ in 0..1000 {
            let d = 1 + rng.index(4);
            let mk = |rng: &mut RngStream| {
                DiagGaussian::new(
                    (0..d).map(|_| 3.0 * rng.normal()).collect(),
                    (0..d).map(|_| rng.uniform_range(-10.0, 10.0)).collect(),
                )
                .unwrap()
            };
            let (q, p) = (mk(&mut rng), mk(&mut rng));
            assert!(kl_diag_gauss(&q, &p).unwrap() >= 0.0);
        }
    }

    /// One-row model whose posterior equals the prior and reproduces `x` and `y`.
    fn perfect_model(x: [f64; 2]) -> ImavaeModel {
        let dims = dims_a(2, 2);
        let enc = linear(
            vec![
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0; 3],
                vec![0.0; 3],
            ],
            vec![0.0, 0.0, -1.0, -1.0],
        );
        let prior = linear(vec![vec![0.0]; 4], vec![x[0], x[1], -1.0, -1.0]);
        ImavaeModel::from_parts(
            dims,
            enc,
            linear(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]),
            prior,
            LinearPredictor {
                coeffs: vec![1.0, 1.0, 0.0],
                intercept: 0.0,
            },
            InputScaling::identity(&dims),
        )
        .unwrap()
    }

    #[test]
    fn perfect_autoencoder_terms() {
        let xv = [0.6, -1.3];
        let m = perfect_model(xv);
        let x = Matrix::from_rows(&[xv.to_vec()]).unwrap();
        let u = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let noise = Matrix::zeros(1, 2);
        let y = [xv[0] + xv[1]];
        let terms = loss_terms(
            &m,
            &BatchInputs {
                x: &x,
                u: &u,
                y: &y,
                noise: &noise,
            },
        )
        .unwrap();
        assert_eq!(terms.recon, 0.0);
        assert!(terms.pred.abs() < 1e-30);
        assert!((terms.elbo + (2.0 * PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn duplicated_rows_match_single_row() {
        let m = random_model(dims_a(3, 2), 12);
        let row = vec![0.5, -0.2, 1.4];
        let x1 = Matrix::from_rows(&[row.clone()]).unwrap();
        let x3 = Matrix::from_rows(&[row.clone(), row.clone(), row]).unwrap();
        let u1 = Matrix::filled(1, 1, 1.0);
        let u3 = Matrix::filled(3, 1, 1.0);
        let n1 = Matrix::from_rows(&[vec![0.3, -0.8]]).unwrap();
        let n3 = Matrix::from_rows(&vec![vec![0.3, -0.8]; 3]).unwrap();
        let b1 = BatchInputs {
            x: &x1,
            u: &u1,
            y: &[0.9],
            noise: &n1,
        };
        let b3 = BatchInputs {
            x: &x3,
            u: &u3,
            y: &[0.9; 3],
            noise: &n3,
        };
        let (t1, t3) = (loss_terms(&m, &b1).unwrap(), loss_terms(&m, &b3).unwrap());
        assert!((t1.recon - t3.recon).abs() < 1e-12);
        assert!((t1.elbo - t3.elbo).abs() < 1e-12);
        assert!((t1.pred - t3.pred).abs() < 1e-12);
    }

    #[test]
    fn loss_terms_match_scalar_recomputation() {
        let m = random_model(dims_a(3, 2), 13);
        let mut rng = RngStream::new(13, 1);
        let n = 4;
        let x = Matrix::from_vec(n, 3, rng.normal_vec(3 * n)).unwrap();
        let t: Vec<u8> = vec![0, 1, 1, 0];
        let u = m.aux_matrix(&t, None).unwrap();
        let y = rng.normal_vec(n);
        let noise = Matrix::from_vec(n, 2, rng.normal_vec(2 * n)).unwrap();
        let terms = loss_terms(
            &m,
            &BatchInputs {
                x: &x,
                u: &u,
                y: &y,
                noise: &noise,
            },
        )
        .unwrap();

        let (mut recon, mut elbo, mut pred) = (0.0, 0.0, 0.0);
        for r in 0..n {
            let xr = x.row(r);
            let tr = t[r] as f64;
            let enc = scalar_mlp(&m.encoder, &[xr[0], xr[1], xr[2], tr]);
            let pri = scalar_mlp(&m.prior_head, &[tr]);
            let mut z = [0.0; 2];
            let mut kl = 0.0;
            for i in 0..2 {
                let lq = enc[2 + i].clamp(-10.0, 10.0);
                let lp = pri[2 + i].clamp(-10.0, 10.0);
                z[i] = enc[i] + (lq / 2.0).exp() * noise.get(r, i);
                kl += 0.5
                    * (lp - lq + (lq.exp() + (enc[i] - pri[i]).powi(2)) / lp.exp() - 1.0);
            }
            let xh = scalar_mlp(&m.decoder, &z);
            let mut ll = 0.0;
            for j in 0..3 {
                let e = xr[j] - xh[j];
                recon += e * e;
                ll += -0.5 * ((2.0 * PI).ln() + e * e);
            }
            elbo += ll - kl;
            let c = &m.predictor.coeffs;
            let yh = m.predictor.intercept + c[0] * z[0] + c[1] * z[1] + c[2] * tr;
            pred += (y[r] - yh).powi(2);
        }
        assert!((terms.recon - recon / (3 * n) as f64).abs() < 1e-8);
        assert!((terms.elbo - elbo / n as f64).abs() < 1e-8);
        assert!((terms.pred - pred / n as f64).abs() < 1e-8);
    }

    #[test]
    fn total_loss_combinations() {
        let t = LossTerms {
            recon: 0.7,
            elbo: -3.2,
            pred: 1.1,
        };
        assert_eq!(total_loss(&t, 0.0, 0.0), 1.1);
        // dropping the standalone reconstruction term cancels the recon part of the ELBO
        assert!((total_loss(&t, -1.0, 1.0) - (-0.7 + 3.2 + 1.1)).abs() < 1e-15);
        assert!((total_loss(&t, 2.0, 0.5) - (1.4 + 1.6 + 1.1)).abs() < 1e-15);
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let dims = ModelDims::new(4, 2, 2, CaseTag::B).unwrap();
        let m = random_model(dims, 17);
        let mut rng = RngStream::new(17, 2);
        let n = 5;
        let x = Matrix::from_vec(n, 4, rng.normal_vec(4 * n)).unwrap();
        let w = Matrix::from_vec(n, 2, rng.normal_vec(2 * n)).unwrap();
        let u = m.aux_matrix(&[0, 1, 0, 1, 1], Some(&w)).unwrap();
        let y = rng.normal_vec(n);
        let noise = Matrix::from_vec(n, 2, rng.normal_vec(2 * n)).unwrap();
        let batch = BatchInputs {
            x: &x,
            u: &u,
            y: &y,
            noise: &noise,
        };
        let weights = ObjectiveWeights {
            alpha: 1.3,
            beta: 0.8,
            kl_weight: 0.6,
        };
        let (value, terms, grads) = objective_and_grad(&m, &batch, weights).unwrap();
        assert_eq!(terms, loss_terms(&m, &batch).unwrap());

        let objective = |model: &ImavaeModel| {
            let mut tape = crate::gradnet::Tape::new();
            let vars = crate::gradnet::Differentiable::register(model, &mut tape);
            let g = build_loss_graph(&mut tape, &vars, model, &batch);
            weights.alpha * tape.scalar(g.recon)
                - weights.beta * (tape.scalar(g.log_lik) - weights.kl_weight * tape.scalar(g.kl))
                + tape.scalar(g.pred)
        };
        assert!((objective(&m) - value).abs() < 1e-12);

        let h = 1e-6;
        let n_groups = m.tensors().len();
        let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
        for g in 0..n_groups {
            let len = m.tensors()[g].len();
            for i in 0..len {
                let mut plus = m.clone();
                plus.tensors_mut()[g][i] += h;
                let mut minus = m.clone();
                minus.tensors_mut()[g][i] -= h;
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let a = analytic[g][i];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
                assert!(rel < 1e-4, "group {g} index {i}: analytic {a}, fd {fd}");
            }
        }
    }

    #[test]
    fn prior_mean_gradient_flows_through_reparameterisation() {
        let m = random_model(dims_a(2, 2), 23);
        let noise = Matrix::from_rows(&[vec![0.5, -1.0], vec![1.5, 0.2]]).unwrap();
        let (_, g) = crate::gradnet::grad(&m.prior_head, |tape, vars| {
            let u = tape.constant(Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap());
            let out = vars.forward(tape, u, "prior");
            let mean = tape.slice_cols(out, 0, 2);
            let lv = tape.slice_cols(out, 2, 2);
            let half = tape.scale(lv, 0.5);
            let sd = tape.exp(half);
            let e = tape.constant(noise.clone());
            let scaled = tape.mul(sd, e);
            let z = tape.add(mean, scaled);
            tape.mean_all(z)
        })
        .unwrap();
        assert!(g.tensors().iter().flat_map(|t| t.iter()).any(|v| v.abs() > 1e-6));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let m = random_model(ModelDims::new(3, 2, 1, CaseTag::B).unwrap(), 31);
        let s = m.to_json().unwrap();
        assert!(s.trim_start().starts_with("{\n  \"format\": \"imavae-model-v1\""));
        let back = ImavaeModel::from_json(&s).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json().unwrap(), s);
        let bad = s.replace("imavae-model-v1", "imavae-model-v0");
        assert!(ImavaeModel::from_json(&bad).is_err());
    }
}
