"""
Example usage of symflow: code the cat-map suspension and compare entropies
"""
from symflow import Stage, build_config, run_pipeline


def main():
    print("=" * 60)
    print("symflow: symbolic coding of the cat-map suspension")
    print("=" * 60)

    # A reduced run: shorter windows and fewer sanity samples than the defaults
    config = build_config(
        window=40,
        manifold_depth=12,
        random_orbits=2,
        sanity_samples=200,
        reduction_points=20,
        reduction_times=5,
        out="demo_out",
    )

    print("\n1. Running the pipeline through the entropy stage...")
    pipeline = run_pipeline(config, until=Stage.ENTROPY)
    st = pipeline.state
    print(f"   ✓ {st.section.slices} section slices, return time {st.section.return_time:.4f}")
    print(f"   ✓ {len(st.alphabet)} symbols, {len(st.graph.vertices)} graph vertices after pruning")
    print(f"   ✓ {len(st.samples)} shadowed samples in {len(st.cover.rectangles)} rectangles")
    print(f"   ✓ {len(st.partition.cells)} partition cells at depth {st.partition.depth}")

    print("\n2. Entropy")
    entropy = st.entropy
    print(f"   oracle (sum of positive exponents): {entropy['oracle']:.6f}")
    if "reference" in entropy:
        top = max(r["suspension_entropy"] for r in entropy["reference"]["rows"])
        print(f"   reference partition shift:          {top:.6f}")
    rows = entropy["second_coding"]["rows"]
    if rows:
        top = max(r["suspension_entropy"] for r in rows)
        print(f"   sampled second coding:              {top:.6f}")

    print("\n3. Invariant checks")
    for stage, checks in pipeline.checks.items():
        for c in checks:
            mark = "✓" if c.passed else "✗"
            print(f"   {mark} {stage}/{c.name}: {c.violations}/{c.samples} violations")

    paths = pipeline.write()
    print(f"\n4. Wrote {len(paths)} artifacts to {config.out}/")


if __name__ == "__main__":
    main()
