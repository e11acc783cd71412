"""
Usage examples: the UMM decoder from Python
"""
from dataclasses import replace

from metrics import ReplayTimer, compute_metrics
from orchestrator import ReplayOrchestrator
from umm import Decoder, DecoderConfig, generate_session, generate_toy_2d, load_preset


def example_1_toy():
    """Four letters in two dimensions"""
    print("=" * 60)
    print("Example 1: 2-D toy speller")
    print("=" * 60)

    toy = generate_toy_2d(seed=0)
    for letter, hypothesis in toy.hypotheses.items():
        dx, dy = hypothesis.delta
        print(f"  hypothesis {letter}: mean difference ({dx:+.2f}, {dy:+.2f})")
    print(f"\n✅ Decoded letter: {toy.decoded} (attended: B)")
    return toy


def example_2_single_session():
    """One synthetic session, decoded trial by trial"""
    print("\n" + "=" * 60)
    print("Example 2: Sequential decoding of one session")
    print("=" * 60)

    config = load_preset("sequential", n_trials=10, seed=1)
    decoder = Decoder(DecoderConfig(mean_strategy="confidence"))
    symbols = config.symbols
    for trial in generate_session(config):
        decision = decoder.process(trial.without_labels())
        mark = "✅" if decision.chosen == trial.true_symbol else "❌"
        print(f"  {mark} trial {decision.trial_index:2d}: {symbols[decision.chosen]} "
              f"(true {symbols[trial.true_symbol]}), confidence {decision.confidence:.2f}")

    w, threshold = decoder.lda_weights()
    print(f"\n📐 LDA weights: {w.shape[0]} values, threshold {threshold:.3f}")
    return decoder


def example_3_replay():
    """Several sessions through the orchestrator, then metrics"""
    print("\n" + "=" * 60)
    print("Example 3: Replay and metrics")
    print("=" * 60)

    config = load_preset("row-column", n_trials=12)
    sessions = [(f"rc-{seed}", generate_session(replace(config, seed=seed))) for seed in range(3)]
    timer = ReplayTimer()
    orchestrator = ReplayOrchestrator(DecoderConfig(), workers=3, timer=timer)
    results = orchestrator.replay(sessions)

    report = compute_metrics([r.frame() for r in results])
    print(f"\n📊 Pooled accuracy: {report.pooled_accuracy:.2%} over {report.n_trials} trials")
    for session_id, accuracy in report.per_session_accuracy.items():
        print(f"  {session_id}: {accuracy:.2%}")
    print("\n⏱️  Stage timing:")
    for stage in ("estimate", "score", "update"):
        timing = timer.stage(stage)
        print(f"  {stage}: {timing['calls']} calls, {timing['mean_seconds'] * 1000:.1f} ms average")
    return report


if __name__ == "__main__":
    print("\n🚀 UMM decoder")
    print("Python usage examples\n")

    try:
        example_1_toy()
        example_2_single_session()
        example_3_replay()

        print("\n" + "=" * 60)
        print("✅ All examples finished")
        print("=" * 60)

    except Exception as e:
        print(f"\n❌ Error: {e}")
        import traceback
        traceback.print_exc()
