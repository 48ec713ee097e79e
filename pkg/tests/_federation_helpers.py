"""Shared helpers for driving full federation sessions inside tests."""

import threading

import numpy as np

from fedabc.discrepancy import HistogramSpec
from fedabc.federation import (
    FederationServer,
    GmmPrior,
    InProcessTransport,
    MessageLog,
    ServerConfig,
    SiteTrainingConfig,
    TcpListener,
    run_site,
    tcp_connect,
)
from fedabc.rng import RngHandle

SITE_CFG = SiteTrainingConfig(
    latent_dim=2, hidden=(5, 3), epochs=15, histogram=HistogramSpec()
)


def site_data(site_id: int, n_major=12, n_minor=4, dim=6):
    gen = RngHandle(seed=9000 + site_id).generator()
    x = np.vstack(
        [
            gen.standard_normal((n_major, dim)),
            gen.standard_normal((n_minor, dim)) + 1.5,
        ]
    )
    y = np.concatenate([np.zeros(n_major), np.ones(n_minor)])
    return x, y


def run_session(
    n_sites,
    epsilon,
    target,
    max_trials,
    transport="inproc",
    seed=8080,
    payloads=False,
    pilot_trials=0,
    deliveries=None,
):
    """Full protocol session with real sites in threads."""
    master = RngHandle(seed)
    prior = GmmPrior.default(n_components=2, dim=SITE_CFG.latent_dim)
    config = ServerConfig(
        n_sites=n_sites,
        prior=prior,
        epsilon=epsilon,
        target_accepted=target,
        max_trials=max_trials,
        pilot_trials=pilot_trials,
        timeout=60.0,
    )
    log = MessageLog(payloads=payloads)

    if transport == "inproc":
        hub = InProcessTransport()
        make_channel = hub.connect
        acceptor = hub
    else:
        listener = TcpListener()
        port = listener.address[1]
        make_channel = lambda: tcp_connect("127.0.0.1", port)
        acceptor = listener

    results = {}
    errors = []

    def site_main(site_id):
        try:
            x, y = site_data(site_id)
            channel = make_channel()
            results[site_id] = run_site(
                site_id, x, y, SITE_CFG, channel, master.child(100 + site_id), timeout=60.0
            )
        except Exception as exc:  # surfaced after join
            errors.append(exc)

    threads = [threading.Thread(target=site_main, args=(i,)) for i in range(n_sites)]
    for t in threads:
        t.start()
    server = FederationServer(config, acceptor, master.child(1), log=log)
    server.wait_for_sites()
    result = server.infer_posterior()
    if deliveries:
        server.deliver_samples(deliveries)
    server.shutdown()
    for t in threads:
        t.join(timeout=60)
    if transport == "tcp":
        acceptor.close()
    if errors:
        raise errors[0]
    return result, results, log
