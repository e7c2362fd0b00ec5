"""Command-line entry points: serve, init-bundles, train-toy, loadgen, roc-csv."""

import argparse
import json
import sys
from pathlib import Path

from . import loadgen as lg
from . import metrics
from .bundle import save_bundle_file
from .cardionet import ModelConfig, build, toy_config
from .ecg import LeadConfiguration
from .service import ServiceConfig, build_service
from .training import TOY_VOCABULARY, TrainConfig, fit, synthetic_dataset


def _cmd_serve(args) -> int:
    import logging

    import threadpoolctl
    import uvicorn

    logging.basicConfig(level=logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    # Worker threads provide the parallelism; per-op BLAS threading only
    # thrashes at this model's matrix sizes.
    threadpoolctl.threadpool_limits(1, user_api="blas")
    cfg = ServiceConfig.load(args.config)
    port = args.port if args.port is not None else cfg.effective_port()
    engine, app = build_service(cfg)
    engine.start()
    try:
        uvicorn.run(app, host=cfg.listen_host, port=port, log_level="warning")
    finally:
        engine.shutdown()
    return 0


def _cmd_init_bundles(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for kind, filename in ((LeadConfiguration.SINGLE_LEAD, "single_lead.bundle"),
                           (LeadConfiguration.TWELVE_LEAD, "twelve_lead.bundle")):
        if args.toy:
            config = toy_config(kind)
        else:
            config = ModelConfig(lead_configuration=kind)
        net = build(config, seed=args.seed)
        path = out / filename
        save_bundle_file(net.to_bundle(), path)
        print(f"wrote {path}")
    return 0


def _cmd_train_toy(args) -> int:
    config = toy_config(labels=TOY_VOCABULARY)
    net = build(config, seed=args.seed)
    print(f"preparing synthetic datasets ({args.train_size} train / {args.val_size} val)")
    train = synthetic_dataset(config, args.train_size, seed=args.seed)
    val = synthetic_dataset(config, args.val_size, seed=args.seed + 1)
    tc = TrainConfig(max_batches=args.max_batches, seed=args.seed,
                     learning_rate=args.learning_rate)
    ledger = fit(net, train, val, tc, run_dir=args.out)
    assert ledger.macro is not None
    print(f"best macro AUC {ledger.macro.auc:.4f} at batch {ledger.macro.batch}")
    for code, snap in sorted(ledger.per_label.items()):
        print(f"  {code}: best AUC {snap.auc:.4f} at batch {snap.batch}")
    print(f"run directory: {args.out}")
    return 0


def _cmd_loadgen(args) -> int:
    if args.corpus:
        payloads = lg.corpus_payloads(args.corpus)
    else:
        kind, _, duration = (args.synthetic or "single:30").partition(":")
        if kind not in ("single", "twelve"):
            print(f"unknown synthetic spec {args.synthetic!r}; use single[:SECONDS] or twelve[:SECONDS]",
                  file=sys.stderr)
            return 2
        payloads = lg.synthetic_payloads(seed=args.seed,
                                         duration_s=float(duration) if duration else 30.0,
                                         twelve_lead=kind == "twelve")
    plan = lg.LoadPlan(url=args.url, token=args.token, total_requests=args.requests,
                       concurrency=args.concurrency, payloads=payloads, seed=args.seed,
                       duration_fallback_s=args.duration_fallback)
    report = lg.run(plan)
    summary = report.to_dict()
    print(json.dumps(summary, indent=2))
    if args.out:
        Path(args.out).write_text(json.dumps(summary, indent=2) + "\n")
        print(f"report written to {args.out}")
    if args.histogram:
        Path(args.histogram).write_text(lg.histogram_csv(report.records))
        print(f"histogram written to {args.histogram}")
    if args.records_csv:
        Path(args.records_csv).write_text(lg.records_csv(report.records))
        print(f"raw records written to {args.records_csv}")
    return 0 if report.complete and not report.error_counts else 1


def _cmd_roc_csv(args) -> int:
    scores, labels = [], []
    text = Path(args.input).read_text()
    for line_no, line in enumerate(text.strip().split("\n"), start=1):
        if line_no == 1 and not line.split(",")[0].replace(".", "").lstrip("-").isdigit():
            continue  # header row
        score, label = line.split(",")
        scores.append(float(score))
        labels.append(int(label))
    curve = metrics.roc_curve(scores, labels)
    csv_text = metrics.curve_csv(curve)
    if args.out:
        Path(args.out).write_text(csv_text)
        print(f"AUC {metrics.roc_auc(scores, labels):.6f}; curve written to {args.out}")
    else:
        sys.stdout.write(csv_text)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="cardioserve",
                                     description="ECG analysis service toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the analysis service")
    p.add_argument("--config", required=True, help="service config JSON file")
    p.add_argument("--port", type=int, default=None, help="override the listen port")
    p.set_defaults(fn=_cmd_serve)

    p = sub.add_parser("init-bundles", help="write freshly initialized model bundles")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--toy", action="store_true", help="8-layer desk-scale configs")
    p.set_defaults(fn=_cmd_init_bundles)

    p = sub.add_parser("train-toy", help="train the sinus-vs-AF toy model on synthetic data")
    p.add_argument("--out", required=True, help="run directory for checkpoints + manifest")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-batches", type=int, default=500)
    p.add_argument("--train-size", type=int, default=400)
    p.add_argument("--val-size", type=int, default=100)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.set_defaults(fn=_cmd_train_toy)

    p = sub.add_parser("loadgen", help="closed-loop stress test against a running service")
    p.add_argument("--url", required=True, help="analyze endpoint URL")
    p.add_argument("--token", required=True)
    p.add_argument("--requests", type=int, required=True)
    p.add_argument("--concurrency", type=int, required=True)
    p.add_argument("--duration-fallback", type=float, default=None,
                   help="stop issuing after this many seconds even if short of --requests")
    p.add_argument("--corpus", default=None, help="directory of *.json wire bodies")
    p.add_argument("--synthetic", default="single:30",
                   help="synthetic payload spec: single[:SECONDS] or twelve[:SECONDS]")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="write the report JSON here")
    p.add_argument("--histogram", default=None, help="write a 50 ms-bucket latency histogram CSV")
    p.add_argument("--records-csv", default=None, help="write raw per-request records CSV")
    p.set_defaults(fn=_cmd_loadgen)

    p = sub.add_parser("roc-csv", help="compute a ROC curve CSV from score,label rows")
    p.add_argument("--input", required=True, help="CSV of score,label rows")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_roc_csv)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
