"""Command-line surface: a thin client over the service.

Every subcommand builds a request, sends it to the service (embedded
in-process unless STIC_SERVICE_URL is set), renders the response, and maps
failure classes to exit codes:

    0  success
    1  validation violations found
    2  configuration or parameter error
    3  input/output or generation failure
    4  per-item skip rate exceeded
"""

from __future__ import annotations

import argparse
import base64
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional

from .client import ServiceClient, ServiceError
from .config import SERVICE_URL_ENV, load_run_config
from .imagefiles import decode_image_bytes, encode_png, load_image, save_image
from .losscore import RecordParseError, load_logprob_records

EXIT_OK = 0
EXIT_VIOLATIONS = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_SKIP_RATE = 4

_CONFIG_ERRORS = {
    "ValueError",
    "ParameterRangeError",
    "RecordParseError",
    "ManifestMismatch",
    "RequestValidationError",
    "KeyError",
    "TypeError",
}
_SKIP_RATE_ERRORS = {"SkipRateExceeded"}


def _exit_code_for(error_class: str) -> int:
    if error_class in _CONFIG_ERRORS:
        return EXIT_CONFIG
    if error_class in _SKIP_RATE_ERRORS:
        return EXIT_SKIP_RATE
    return EXIT_IO


def _load_config_dict(path: Optional[str]) -> Optional[dict]:
    if path is None:
        return None
    return load_run_config(path).to_dict()


def _image_b64(path: str) -> str:
    return base64.b64encode(encode_png(load_image(path))).decode("ascii")


def _print_job_summary(summary: dict) -> None:
    counts = summary.get("counts", {})
    print(f"config digest: {summary['config_digest']}")
    parts = [f"{counts.get('done', 0)} done", f"{counts.get('skipped', 0)} skipped"]
    if "bad_prompt" in counts:
        parts.append(f"bad_prompt={counts['bad_prompt']}")
        parts.append(f"corruption={counts['corruption']}")
    print(f"records: {', '.join(parts)}")
    print(f"output: {summary['out_path']} (sha256 {summary['output_sha256']})")
    print(f"manifest: {summary['manifest_path']}")


def _finish_job(status: dict) -> int:
    if status["state"] == "succeeded":
        _print_job_summary(status["summary"])
        return EXIT_OK
    error_class = status.get("error_class", "RuntimeError")
    print(f"error [{error_class}]: {status.get('message', '')}", file=sys.stderr)
    return _exit_code_for(error_class)


def cmd_build_pref(args, client: ServiceClient) -> int:
    payload = {
        "images_dir": args.images,
        "out_path": args.out,
        "count": args.count,
        "seed": args.seed,
        "mock": args.mock,
        "resume": args.resume,
        "max_workers": args.workers,
        "config": _load_config_dict(args.config),
    }
    return _finish_job(client.run_job("/v1/jobs/preference", payload))


def cmd_build_infuse(args, client: ServiceClient) -> int:
    payload = {
        "sft_path": args.sft,
        "images_root": args.images_root,
        "out_path": args.out,
        "subset": args.subset,
        "seed": args.seed,
        "mock": args.mock,
        "resume": args.resume,
        "max_workers": args.workers,
        "config": _load_config_dict(args.config),
    }
    return _finish_job(client.run_job("/v1/jobs/infuse", payload))


def cmd_corrupt(args, client: ServiceClient) -> int:
    payload = {
        "image_b64": _image_b64(args.inp),
        "mode": args.mode,
        "factor": args.factor,
        "seed": args.seed,
        "hue_shift_deg": args.hue,
        "sat_scale": args.sat,
        "bright_scale": args.bright,
        "contrast_scale": args.contrast,
    }
    result = client.request("POST", "/v1/corrupt", json=payload)
    out = decode_image_bytes(base64.b64decode(result["image_b64"]))
    save_image(out, args.out)
    print(f"spec: {json.dumps(result['spec'], sort_keys=True)}")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_loss_eval(args, client: ServiceClient) -> int:
    records = load_logprob_records(args.records)
    payload = {
        "records": [
            {
                "id": r.record_id,
                "policy_w": r.policy_w,
                "policy_l": r.policy_l,
                "ref_w": r.ref_w,
                "ref_l": r.ref_l,
            }
            for r in records
        ],
        "lam": args.lam,
        "alpha": args.alpha,
        "want_grads": args.grad,
    }
    report = client.request("POST", "/v1/loss/eval", json=payload)
    agg = report["aggregate"]
    print(f"records: {agg['count']}")
    print(f"mean loss: {agg['mean_loss']!r}")
    print(f"mean margin: {agg['mean_margin']!r}")
    print(f"fraction margin>0: {agg['frac_margin_positive']!r}")
    if args.json_out:
        with open(args.json_out, "w", encoding="utf-8") as fh:
            json.dump(report, fh, ensure_ascii=False, indent=2)
        print(f"wrote {args.json_out}")
    return EXIT_OK


def cmd_infer(args, client: ServiceClient) -> int:
    payload = {
        "image_b64": _image_b64(args.image),
        "question": args.question,
        "dar": args.dar,
        "mock": args.mock,
        "seed": args.seed,
        "config": _load_config_dict(args.config),
    }
    result = client.request("POST", "/v1/infer", json=payload)
    if result.get("description") is not None:
        print("description:")
        print(result["description"])
        print()
    print("answer:")
    print(result["answer"])
    print(f"generation calls: {result['gen_calls']}")
    return EXIT_OK


def cmd_validate(args, client: ServiceClient) -> int:
    result = client.request(
        "POST", "/v1/validate", json={"path": args.file, "kind": args.schema}
    )
    for violation in result["violations"]:
        print(f"line {violation['line']}: {violation['message']}")
    if result["ok"]:
        print(f"OK ({result['lines']} lines)")
        return EXIT_OK
    print(f"FAILED: {len(result['violations'])} violations in {result['lines']} lines")
    return EXIT_VIOLATIONS


def cmd_serve(args, client: ServiceClient) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stic",
        description="Self-training data factory and preference-loss service client.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-pref", help="construct the preference dataset")
    p.add_argument("--images", required=True, help="directory of unlabeled images")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--count", type=int, help="cap on ingested images")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--mock", action="store_true", help="use the offline mock backend")
    p.add_argument("--resume", action="store_true", help="resume from an existing manifest")
    p.add_argument("--workers", type=int, default=4)
    p.set_defaults(func=cmd_build_pref)

    p = sub.add_parser("build-infuse", help="construct the description-infused dataset")
    p.add_argument("--sft", required=True, help="instruction data JSONL")
    p.add_argument("--images-root", required=True, help="root for relative image paths")
    p.add_argument("--out", required=True)
    p.add_argument("--subset", type=int, help="subsample size")
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--mock", action="store_true")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--workers", type=int, default=4)
    p.set_defaults(func=cmd_build_infuse)

    p = sub.add_parser("corrupt", help="corrupt one image")
    p.add_argument("--in", dest="inp", required=True, help="input image")
    p.add_argument("--out", required=True, help="output image")
    p.add_argument("--mode", required=True, choices=["lowres", "jitter"])
    p.add_argument("--factor", type=float, help="lowres scale factor in (0, 1]")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hue", type=float, help="explicit jitter hue shift in degrees")
    p.add_argument("--sat", type=float, help="explicit jitter saturation scale")
    p.add_argument("--bright", type=float, help="explicit jitter brightness scale")
    p.add_argument("--contrast", type=float, help="explicit jitter contrast scale")
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("loss-eval", help="evaluate losses over a record file")
    p.add_argument("--records", required=True, help="JSONL of log-prob records")
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--alpha", default="1/1024", help="number or fraction string")
    p.add_argument("--grad", action="store_true", help="include per-record gradients")
    p.add_argument("--json-out", help="write the full report JSON here")
    p.set_defaults(func=cmd_loss_eval)

    p = sub.add_parser("infer", help="answer a question about an image")
    p.add_argument("--image", required=True)
    p.add_argument("--question", required=True)
    p.add_argument("--dar", action="store_true", help="describe first, then respond")
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--mock", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("validate", help="validate a dataset file")
    p.add_argument("--file", required=True)
    p.add_argument("--schema", required=True, choices=["preference", "infused"])
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    logging.basicConfig(
        level=os.environ.get("STIC_LOG_LEVEL", "WARNING"),
        format="[%(asctime)s] %(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    client = ServiceClient(base_url=os.environ.get(SERVICE_URL_ENV))
    try:
        return args.func(args, client)
    except RecordParseError as exc:
        print(f"error [RecordParseError]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ServiceError as exc:
        print(f"error [{exc.error_class}]: {exc.message}", file=sys.stderr)
        return _exit_code_for(exc.error_class)
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
        return EXIT_IO
    finally:
        client.close()


if __name__ == "__main__":
    sys.exit(main())
