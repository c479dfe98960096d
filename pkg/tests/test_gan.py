import copy
import math
import statistics

import numpy as np
import pytest
import torch

from uda4sr import gan
from uda4sr.corpus import SplitCorpus, UserSequence, Vocab
from uda4sr.gan import (
    AugmentConfig,
    BadLength,
    InvalidDistribution,
    SequenceDiscriminator,
    SequenceGenerator,
    anneal_temperature,
    discriminator_loss,
    diversity_penalty,
    generate_continuation,
    generate_continuations,
    generator_loss,
    gumbel_softmax_step,
    pretrain_generator_mle,
    synthesize,
)

from helpers import fd_group_check

V, D = 12, 8
SEQ_LEN = 12


def fresh_embedding(seed=0, num_items=V, d=D):
    torch.manual_seed(seed)
    emb = torch.randn(num_items + 1, d, dtype=torch.float64)
    emb[0] = 0.0
    return emb


def make_generator(seed=0, num_items=V, d=D):
    torch.manual_seed(seed)
    return SequenceGenerator(d, num_items)


def alternating_patterns(n_each, length=SEQ_LEN):
    """Two interleaved two-item loops: (1,2,1,2,...) and (3,4,3,4,...)."""
    seqs = []
    for k in range(n_each):
        seqs.append([1 if (t + k) % 2 == 0 else 2 for t in range(length)])
        seqs.append([3 if (t + k) % 2 == 0 else 4 for t in range(length)])
    return seqs


def pattern_items(seq):
    return {1, 2} if seq[0] in (1, 2) else {3, 4}


class TestPretrainMLE:
    def test_zero_epochs_is_bitwise_identity(self):
        gen_mod = make_generator(1)
        before = copy.deepcopy(gen_mod.state_dict())
        curve = pretrain_generator_mle(
            gen_mod, fresh_embedding(1), alternating_patterns(4), 0, 1e-2, np.random.default_rng(0)
        )
        assert curve == []
        for key, val in gen_mod.state_dict().items():
            assert torch.equal(val, before[key])

    def test_learns_alternating_pattern(self):
        gen_mod = make_generator(2)
        emb = fresh_embedding(2)
        seqs = alternating_patterns(10)
        pretrain_generator_mle(gen_mod, emb, seqs, epochs=20, lr=1e-2, rng=np.random.default_rng(2))
        correct = total = 0
        with torch.no_grad():
            for seq in alternating_patterns(3):
                h = torch.zeros(1, D, dtype=torch.float64)
                for t in range(len(seq) - 1):
                    h = gen_mod.cell(emb[torch.tensor([seq[t]])], h)
                    pred = int(gen_mod.step_logits(h).argmax())
                    correct += pred == seq[t + 1]
                    total += 1
        assert correct / total > 0.9

    def test_loss_curve_non_increasing_median_of_three_seeds(self):
        votes = []
        for seed in (0, 1, 2):
            gen_mod = make_generator(seed + 10)
            curve = pretrain_generator_mle(
                gen_mod,
                fresh_embedding(seed + 10),
                alternating_patterns(10),
                epochs=5,
                lr=1e-2,
                rng=np.random.default_rng(seed),
            )
            votes.append(all(b <= a + 1e-6 for a, b in zip(curve, curve[1:])))
        assert statistics.median(votes) == 1


class TestGeneration:
    def test_zero_noise_low_temp_gives_argmax(self):
        logits = torch.tensor([0.3, -1.0, 2.5, 0.1], dtype=torch.float64)
        soft, hard = gumbel_softmax_step(logits, torch.zeros_like(logits), temp=1e-3)
        assert int(hard) == 2
        assert float(soft[2]) == pytest.approx(1.0, abs=1e-12)

    def test_exactly_one_generated_token(self):
        gen_mod = make_generator(3)
        soft, hard = generate_continuation(
            gen_mod, fresh_embedding(3), [1, 2, 3], 4, 1.0, np.random.default_rng(0)
        )
        assert soft.shape == (1, V + 1)
        assert len(hard) == 1

    def test_bad_lengths_rejected(self):
        gen_mod = make_generator(4)
        emb = fresh_embedding(4)
        with pytest.raises(BadLength):
            generate_continuation(gen_mod, emb, [], 3, 1.0, np.random.default_rng(0))
        with pytest.raises(BadLength):
            generate_continuation(gen_mod, emb, [1, 2], 2, 1.0, np.random.default_rng(0))

    def test_uniform_logits_sample_uniformly(self):
        num_items = 10
        gen_mod = make_generator(5, num_items=num_items)
        with torch.no_grad():
            gen_mod.out_proj.weight.zero_()
            gen_mod.out_proj.bias.zero_()
        emb = fresh_embedding(5, num_items=num_items)
        n = 10000
        with torch.no_grad():
            _, hard = generate_continuations(
                gen_mod, emb, [[1]] * n, [2] * n, 1.0, np.random.default_rng(6)
            )
        counts = np.bincount([h[0] for h in hard], minlength=num_items + 1)
        assert counts[0] == 0  # padding never sampled
        freqs = counts[1:] / n
        assert np.all(np.abs(freqs - 0.1) < 0.01)

    def test_deterministic_given_seed(self):
        gen_mod = make_generator(7)
        emb = fresh_embedding(7)
        out1 = generate_continuation(gen_mod, emb, [2, 5], 8, 0.8, np.random.default_rng(11))
        out2 = generate_continuation(gen_mod, emb, [2, 5], 8, 0.8, np.random.default_rng(11))
        assert out1[1] == out2[1]
        assert torch.equal(out1[0], out2[0])


class TestDiversityPenalty:
    def test_uniform_gives_zero(self):
        rows = torch.full((6, 8), 1.0 / 8, dtype=torch.float64)
        assert float(diversity_penalty(rows)) == pytest.approx(0.0, abs=1e-9)

    def test_collapsed_one_hot_gives_log_v(self):
        rows = torch.zeros(5, 8, dtype=torch.float64)
        rows[:, 3] = 1.0
        assert float(diversity_penalty(rows)) == pytest.approx(math.log(8), abs=1e-9)

    def test_half_half_gives_log_two(self):
        rows = torch.zeros(6, 4, dtype=torch.float64)
        rows[:3, 0] = 1.0
        rows[3:, 1] = 1.0
        assert float(diversity_penalty(rows)) == pytest.approx(math.log(2), abs=1e-9)

    def test_off_simplex_rejected(self):
        rows = torch.full((2, 4), 0.3, dtype=torch.float64)
        with pytest.raises(InvalidDistribution):
            diversity_penalty(rows)
        neg = torch.tensor([[1.2, -0.2, 0.0, 0.0]], dtype=torch.float64)
        with pytest.raises(InvalidDistribution):
            diversity_penalty(neg)

    def test_range_on_random_distributions(self):
        rng = np.random.default_rng(8)
        for _ in range(25):
            n, v = int(rng.integers(1, 6)), int(rng.integers(2, 9))
            rows = torch.from_numpy(rng.dirichlet(np.ones(v), size=n))
            val = float(diversity_penalty(rows))
            assert -1e-12 <= val <= math.log(v) + 1e-12


class TestAdversarial:
    def test_constant_half_discriminator_loss(self):
        half = torch.full((5,), 0.5, dtype=torch.float64)
        assert float(discriminator_loss(half, half)) == pytest.approx(2 * math.log(2), abs=1e-12)

    def test_perfect_discriminator_generator_loss(self):
        d_fake = torch.full((3,), 1e-3, dtype=torch.float64)
        loss = generator_loss(d_fake, torch.empty(0, 4), eta_div=0.0)
        assert float(loss) == pytest.approx(-math.log(1e-3), abs=1e-9)
        assert float(loss) == pytest.approx(6.9078, abs=1e-4)

    def test_toy_run_dynamics_median_of_three_seeds(self):
        """200 adversarial steps: D beats chance without being perfect, and the
        generator matches the planted patterns better than its MLE-only twin."""

        def match_rate(gen_mod, emb, seqs, rng):
            prefixes = [s[:6] for s in seqs]
            with torch.no_grad():
                _, hard = generate_continuations(
                    gen_mod, emb, prefixes, [SEQ_LEN] * len(seqs), 0.5, rng
                )
            flat = [(tok in pattern_items(s)) for s, h in zip(seqs, hard) for tok in h]
            return sum(flat) / len(flat)

        accs, mle_rates, adv_rates = [], [], []
        for seed in (0, 1, 2):
            torch.manual_seed(seed)
            emb = fresh_embedding(seed)
            gen_mod = SequenceGenerator(D, V)
            disc = SequenceDiscriminator(D)
            rng = np.random.default_rng(seed)
            train = alternating_patterns(10)
            held = alternating_patterns(3)
            pretrain_generator_mle(gen_mod, emb, train, epochs=1, lr=1e-2, rng=rng)
            gen_mle = copy.deepcopy(gen_mod)

            cfg = AugmentConfig(prefix_frac=0.5, eta_div=0.1, lr=1e-2)
            opt_g = torch.optim.Adam(gen_mod.parameters(), lr=cfg.lr)
            opt_d = torch.optim.Adam(disc.parameters(), lr=cfg.lr)
            for step in range(200):
                idx = rng.choice(len(train), size=8, replace=False)
                temp = anneal_temperature(cfg, step, 200)
                gan.adversarial_step(
                    [train[i] for i in idx], gen_mod, disc, opt_g, opt_d, emb, cfg, temp, rng
                )

            with torch.no_grad():
                prefixes = [s[:6] for s in held]
                soft, hard = generate_continuations(
                    gen_mod, emb, prefixes, [SEQ_LEN] * len(held), 0.5, rng
                )
                d_real = disc(gan._pool_real(emb, held))
                d_fake = disc(gan._pool_fake(emb, prefixes, soft, hard))
            acc = (float((d_real > 0.5).sum()) + float((d_fake < 0.5).sum())) / (2 * len(held))
            accs.append(acc)
            mle_rates.append(match_rate(gen_mle, emb, held, np.random.default_rng(99)))
            adv_rates.append(match_rate(gen_mod, emb, held, np.random.default_rng(99)))

        assert 0.5 < statistics.median(accs) < 1.0
        assert statistics.median(adv_rates) > statistics.median(mle_rates)

    def test_soft_path_gradient_matches_finite_differences(self):
        gen_mod = make_generator(20, num_items=8, d=6)
        torch.manual_seed(21)
        disc = SequenceDiscriminator(6)
        emb = fresh_embedding(21, num_items=8, d=6)
        prefixes = [[1, 2], [3, 4]]
        target_lens = [5, 6]

        def soft_loss():
            soft, _ = generate_continuations(
                gen_mod, emb, prefixes, target_lens, 1.0, np.random.default_rng(42)
            )
            pooled = []
            for p, s in zip(prefixes, soft):
                head = emb[torch.tensor(p, dtype=torch.long)]
                pooled.append(torch.cat([head, s @ emb], dim=0).mean(dim=0))
            d_fake = disc(torch.stack(pooled))
            return generator_loss(d_fake, torch.cat([s[:, 1:] for s in soft]), eta_div=0.1)

        fd_group_check(
            soft_loss,
            [("out_proj.weight", gen_mod.out_proj.weight), ("out_proj.bias", gen_mod.out_proj.bias)],
            step=1e-5,
            rel_tol=1e-3,
        )


def pattern_corpus(n_users=10) -> SplitCorpus:
    vocab_items = [f"i{k}" for k in range(1, V + 1)]
    lists = alternating_patterns(n_users // 2)
    sequences = []
    for u, items in enumerate(lists):
        L = len(items)
        sequences.append(UserSequence(f"u{u}", u, items, max(1, int(0.8 * L)), max(2, int(0.9 * L))))
    vocab = Vocab({it: k + 1 for k, it in enumerate(vocab_items)}, [None] + vocab_items)
    freq = np.zeros(V + 1, dtype=np.int64)
    for s in sequences:
        for it in s.items[: s.train_end]:
            freq[it] += 1
    return SplitCorpus(sequences, vocab, freq, 0)


class TestSynthesize:
    def test_rho_zero_gives_empty(self):
        corpus = pattern_corpus()
        cfg = AugmentConfig(rho_aug=0.0)
        gen_mod = make_generator(30)
        out = synthesize(corpus, gen_mod, fresh_embedding(30), cfg, np.random.default_rng(0))
        assert out == []

    def test_count_is_rho_times_train_sequences(self):
        corpus = pattern_corpus(n_users=100)
        cfg = AugmentConfig(rho_aug=0.2)
        gen_mod = make_generator(31)
        out = synthesize(corpus, gen_mod, fresh_embedding(31), cfg, np.random.default_rng(1))
        assert len(out) == 20

    def test_invariants_on_generated_batch(self):
        corpus = pattern_corpus(n_users=20)
        cfg = AugmentConfig(rho_aug=0.5, prefix_frac=0.5)
        gen_mod = make_generator(32)
        out = synthesize(corpus, gen_mod, fresh_embedding(32), cfg, np.random.default_rng(2))
        by_user = {s.user: s for s in corpus.sequences}
        for syn in out:
            src = by_user[syn.origin_user]
            assert len(syn.items) == src.train_end
            assert 0 not in syn.items
            assert syn.synthetic is True
            plen = gan.prefix_length(src.train_end, cfg.prefix_frac)
            assert syn.items[:plen] == src.items[:plen]

    def test_deterministic_given_seed(self):
        corpus = pattern_corpus(n_users=20)
        cfg = AugmentConfig(rho_aug=0.3)
        gen_mod = make_generator(33)
        emb = fresh_embedding(33)
        a = synthesize(corpus, gen_mod, emb, cfg, np.random.default_rng(5))
        b = synthesize(corpus, gen_mod, emb, cfg, np.random.default_rng(5))
        assert a == b
