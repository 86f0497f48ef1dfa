from macrorealapp.management.base import ExperimentCommand


class Command(ExperimentCommand):
    help = "Scan Leggett-Garg correlators over a grid of time steps."
    experiment = "lgi_scan"
